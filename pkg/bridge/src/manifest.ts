/** JSONL sample manifest: one header line, then one record per sample. */

import * as fs from "node:fs";
import type { TokenLayout } from "./format.js";

export interface ManifestHeader {
  layout: TokenLayout;
  dim: number;
  seen_generators: string[];
  unseen_generators: string[];
  meta?: Record<string, unknown>;
}

export interface SampleRecord {
  sample_id: string;
  feature_path: string;
  label: "real" | "fake";
  generator: string;
  split: "reference" | "eval";
  image_path?: string;
}

export interface Manifest {
  header: ManifestHeader;
  records: SampleRecord[];
}

export function loadManifest(path: string): Manifest {
  const lines = fs
    .readFileSync(path, "utf-8")
    .split("\n")
    .filter((l) => l.trim().length > 0);
  if (lines.length === 0) {
    throw new Error("empty manifest");
  }
  const header = JSON.parse(lines[0]) as ManifestHeader;
  const records: SampleRecord[] = [];
  const seen = new Set<string>();
  for (const line of lines.slice(1)) {
    const rec = JSON.parse(line) as SampleRecord;
    if (seen.has(rec.sample_id)) {
      throw new Error(`duplicate id: ${rec.sample_id}`);
    }
    seen.add(rec.sample_id);
    records.push(rec);
  }
  return { header, records };
}

export function saveManifest(manifest: Manifest, path: string): void {
  const lines = [JSON.stringify(manifest.header)];
  for (const rec of manifest.records) {
    lines.push(JSON.stringify(rec));
  }
  fs.writeFileSync(path, lines.join("\n") + "\n", "utf-8");
}
