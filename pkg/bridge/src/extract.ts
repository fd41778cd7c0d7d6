/**
 * Feature-extraction CLI.
 *
 * Usage: extract --manifest in.jsonl --out features/ [--model rp16-64] [--batch 32]
 *
 * Reads a JSONL manifest whose records carry image_path entries, extracts one
 * feature file per sample with the named frozen model, and writes a rewritten
 * manifest (out/manifest.jsonl) whose records point at the new feature files.
 * Unreadable images are skipped with a warning and listed in extract_log.json;
 * an unknown model id aborts.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import decodeJpeg from "jpeg-js";
import { PNG } from "pngjs";
import { FrozenBackbone, type DecodedImage } from "./backbone.js";
import { encodeFeatureFile } from "./format.js";
import { loadManifest, saveManifest, type SampleRecord } from "./manifest.js";

export interface ExtractOptions {
  manifest: string;
  out: string;
  model: string;
  batch: number;
}

export function parseArgs(argv: string[]): ExtractOptions {
  const opts: ExtractOptions = { manifest: "", out: "", model: "rp16-64", batch: 32 };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--manifest":
        opts.manifest = value;
        i++;
        break;
      case "--out":
        opts.out = value;
        i++;
        break;
      case "--model":
        opts.model = value;
        i++;
        break;
      case "--batch":
        opts.batch = Number.parseInt(value, 10);
        i++;
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!opts.manifest || !opts.out) {
    throw new Error("usage: extract --manifest in.jsonl --out features/ [--model id] [--batch n]");
  }
  if (!Number.isInteger(opts.batch) || opts.batch < 1) {
    throw new Error("--batch must be a positive integer");
  }
  return opts;
}

function rgbaToRgbFloat(width: number, height: number, rgba: Uint8Array): DecodedImage {
  const data = new Float32Array(width * height * 3);
  for (let p = 0; p < width * height; p++) {
    data[p * 3] = rgba[p * 4] / 255;
    data[p * 3 + 1] = rgba[p * 4 + 1] / 255;
    data[p * 3 + 2] = rgba[p * 4 + 2] / 255;
  }
  return { width, height, data };
}

export function decodeImage(filePath: string): DecodedImage {
  const blob = fs.readFileSync(filePath);
  if (blob.length >= 8 && blob.readUInt32BE(0) === 0x89504e47) {
    const png = PNG.sync.read(blob);
    return rgbaToRgbFloat(png.width, png.height, png.data);
  }
  if (blob.length >= 2 && blob[0] === 0xff && blob[1] === 0xd8) {
    const jpg = decodeJpeg.decode(blob, { useTArray: true });
    return rgbaToRgbFloat(jpg.width, jpg.height, jpg.data);
  }
  throw new Error("unsupported image format");
}

export interface ExtractResult {
  written: number;
  skipped: { sample_id: string; reason: string }[];
  manifestPath: string;
}

export function runExtract(opts: ExtractOptions): ExtractResult {
  const backbone = new FrozenBackbone(opts.model); // unknown id throws here (abort)
  const manifest = loadManifest(opts.manifest);
  const manifestDir = path.dirname(path.resolve(opts.manifest));
  fs.mkdirSync(opts.out, { recursive: true });

  const skipped: ExtractResult["skipped"] = [];
  const outRecords: SampleRecord[] = [];
  const pending = manifest.records;

  for (let start = 0; start < pending.length; start += opts.batch) {
    const batchRecords = pending.slice(start, start + opts.batch);
    const decoded: { rec: SampleRecord; img: DecodedImage }[] = [];
    for (const rec of batchRecords) {
      if (!rec.image_path) {
        skipped.push({ sample_id: rec.sample_id, reason: "no image_path" });
        console.warn(`warning: skipping ${rec.sample_id}: no image_path`);
        continue;
      }
      const ipath = path.isAbsolute(rec.image_path)
        ? rec.image_path
        : path.join(manifestDir, rec.image_path);
      try {
        decoded.push({ rec, img: decodeImage(ipath) });
      } catch (err) {
        const reason = err instanceof Error ? err.message : String(err);
        skipped.push({ sample_id: rec.sample_id, reason });
        console.warn(`warning: skipping ${rec.sample_id}: ${reason}`);
      }
    }
    const tensors = backbone.extractBatch(decoded.map((d) => d.img));
    decoded.forEach(({ rec }, i) => {
      const fileName = `${rec.sample_id}.fgts`;
      fs.writeFileSync(path.join(opts.out, fileName), encodeFeatureFile(tensors[i]));
      outRecords.push({ ...rec, feature_path: fileName });
    });
  }
  backbone.dispose();

  const manifestPath = path.join(opts.out, "manifest.jsonl");
  saveManifest(
    {
      header: {
        layout: backbone.spec.layout,
        dim: backbone.spec.dim,
        seen_generators: manifest.header.seen_generators,
        unseen_generators: manifest.header.unseen_generators,
        meta: {
          ...(manifest.header.meta ?? {}),
          model: backbone.spec.id,
          input_size: backbone.spec.inputSize,
          feature_tap: backbone.spec.featureTap,
        },
      },
      records: outRecords,
    },
    manifestPath,
  );
  fs.writeFileSync(
    path.join(opts.out, "extract_log.json"),
    JSON.stringify({ model: opts.model, written: outRecords.length, skipped }, null, 2) + "\n",
  );
  return { written: outRecords.length, skipped, manifestPath };
}

export function main(argv: string[]): number {
  let opts: ExtractOptions;
  try {
    opts = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
  try {
    const result = runExtract(opts);
    console.log(
      `extracted ${result.written} samples (${result.skipped.length} skipped) -> ${result.manifestPath}`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
