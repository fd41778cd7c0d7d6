import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { PNG } from "pngjs";
import { beforeAll, describe, expect, it } from "vitest";
import { FrozenBackbone, resolveModel, type DecodedImage } from "../src/backbone.js";
import { decodeFeatureFile, encodeFeatureFile, nTokens, type FeatureTensor } from "../src/format.js";
import { loadManifest } from "../src/manifest.js";
import { decodeImage, main, runExtract } from "../src/extract.js";

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function randomImage(seed: number, size = 224): DecodedImage {
  const rng = mulberry32(seed);
  const data = new Float32Array(size * size * 3);
  for (let i = 0; i < data.length; i++) {
    data[i] = rng();
  }
  return { width: size, height: size, data };
}

function writePng(img: DecodedImage, filePath: string): void {
  const png = new PNG({ width: img.width, height: img.height });
  for (let p = 0; p < img.width * img.height; p++) {
    png.data[p * 4] = Math.round(img.data[p * 3] * 255);
    png.data[p * 4 + 1] = Math.round(img.data[p * 3 + 1] * 255);
    png.data[p * 4 + 2] = Math.round(img.data[p * 3 + 2] * 255);
    png.data[p * 4 + 3] = 255;
  }
  fs.writeFileSync(filePath, PNG.sync.write(png));
}

function maxAbsDiff(a: Float32Array, b: Float32Array): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) {
    worst = Math.max(worst, Math.abs(a[i] - b[i]));
  }
  return worst;
}

describe("feature file format", () => {
  const layout = { n_cls: 1, n_reg: 4, grid_h: 14, grid_w: 14 };

  function randomTensor(seed: number, dim = 8): FeatureTensor {
    const rng = mulberry32(seed);
    const data = new Float32Array(nTokens(layout) * dim);
    for (let i = 0; i < data.length; i++) {
      data[i] = Math.fround(rng() * 2 - 1);
    }
    return { layout, dim, data };
  }

  it("roundtrips bit-exactly", () => {
    const t = randomTensor(1);
    const back = decodeFeatureFile(encodeFeatureFile(t));
    expect(back.layout).toEqual(t.layout);
    expect(back.dim).toBe(t.dim);
    expect(Buffer.from(back.data.buffer).equals(Buffer.from(t.data.buffer))).toBe(true);
  });

  it("rejects bad magic", () => {
    const blob = encodeFeatureFile(randomTensor(2));
    blob.write("XXXX", 0, "ascii");
    expect(() => decodeFeatureFile(blob)).toThrow("bad magic");
  });

  it("rejects version mismatch", () => {
    const blob = encodeFeatureFile(randomTensor(3));
    blob.writeUInt16LE(9, 4);
    expect(() => decodeFeatureFile(blob)).toThrow("version mismatch");
  });

  it("rejects truncated payloads and trailing bytes", () => {
    const blob = encodeFeatureFile(randomTensor(4));
    expect(() => decodeFeatureFile(blob.subarray(0, blob.length - 3))).toThrow("truncated");
    expect(() => decodeFeatureFile(Buffer.concat([blob, Buffer.alloc(2)]))).toThrow("trailing");
  });

  it("rejects non-finite values", () => {
    const t = randomTensor(5);
    t.data[7] = Number.NaN;
    expect(() => encodeFeatureFile(t)).toThrow("non-finite");
  });
});

describe("frozen backbone", () => {
  let backbone: FrozenBackbone;
  beforeAll(() => {
    backbone = new FrozenBackbone("rp16-64");
  });

  it("declares the documented layout", () => {
    const spec = resolveModel("rp16-64");
    expect(spec.layout).toEqual({ n_cls: 1, n_reg: 4, grid_h: 14, grid_w: 14 });
    expect(spec.dim).toBe(64);
    expect(spec.inputSize).toBe(224);
  });

  it("rejects unknown model ids", () => {
    expect(() => resolveModel("vit-unobtainium")).toThrow("unknown model id");
  });

  it("is bit-identical on repeat extraction", () => {
    const img = randomImage(10);
    const a = backbone.extractOne(img);
    const b = backbone.extractOne(img);
    expect(Buffer.from(a.data.buffer).equals(Buffer.from(b.data.buffer))).toBe(true);
  });

  it("per-sample output does not depend on batch composition", () => {
    const images = [randomImage(11), randomImage(12), randomImage(13)];
    const batched = backbone.extractBatch(images);
    for (let i = 0; i < images.length; i++) {
      const single = backbone.extractOne(images[i]);
      expect(maxAbsDiff(batched[i].data, single.data)).toBeLessThanOrEqual(1e-4);
    }
  });

  it("resizes non-224 inputs", () => {
    const out = backbone.extractOne(randomImage(14, 100));
    expect(out.data.length).toBe(201 * 64);
    expect(out.data.every((v) => Number.isFinite(v))).toBe(true);
  });
});

describe("extract CLI", () => {
  let workDir: string;
  let manifestPath: string;

  beforeAll(() => {
    workDir = fs.mkdtempSync(path.join(os.tmpdir(), "bridge-"));
    const imgDir = path.join(workDir, "images");
    fs.mkdirSync(imgDir);
    const lines = [
      JSON.stringify({
        layout: { n_cls: 1, n_reg: 4, grid_h: 14, grid_w: 14 },
        dim: 64,
        seen_generators: ["gen_a"],
        unseen_generators: [],
      }),
    ];
    for (let i = 0; i < 10; i++) {
      const sid = `s${String(i).padStart(2, "0")}`;
      writePng(randomImage(100 + i, 64), path.join(imgDir, `${sid}.png`));
      lines.push(
        JSON.stringify({
          sample_id: sid,
          feature_path: "",
          label: i % 2 ? "fake" : "real",
          generator: i % 2 ? "gen_a" : "-",
          split: i < 6 ? "reference" : "eval",
          image_path: `images/${sid}.png`,
        }),
      );
    }
    // one unreadable entry: exists but is not an image
    fs.writeFileSync(path.join(imgDir, "junk.png"), "not an image");
    lines.push(
      JSON.stringify({
        sample_id: "junk",
        feature_path: "",
        label: "real",
        generator: "-",
        split: "eval",
        image_path: "images/junk.png",
      }),
    );
    manifestPath = path.join(workDir, "manifest.jsonl");
    fs.writeFileSync(manifestPath, lines.join("\n") + "\n");
  });

  it("extracts all readable samples and skips unreadable ones with a log", () => {
    const out = path.join(workDir, "features");
    const result = runExtract({ manifest: manifestPath, out, model: "rp16-64", batch: 4 });
    expect(result.written).toBe(10);
    expect(result.skipped).toEqual([{ sample_id: "junk", reason: expect.any(String) }]);
    const rewritten = loadManifest(result.manifestPath);
    expect(rewritten.records).toHaveLength(10);
    expect(rewritten.header.dim).toBe(64);
    expect(rewritten.header.meta?.model).toBe("rp16-64");
    for (const rec of rewritten.records) {
      const tensor = decodeFeatureFile(fs.readFileSync(path.join(out, rec.feature_path)));
      expect(nTokens(tensor.layout)).toBe(201);
    }
    const log = JSON.parse(fs.readFileSync(path.join(out, "extract_log.json"), "utf-8"));
    expect(log.skipped).toHaveLength(1);
  });

  it("produces files that pass the toolkit validator", () => {
    const out = path.join(workDir, "features2");
    const result = runExtract({ manifest: manifestPath, out, model: "rp16-64", batch: 32 });
    const proc = spawnSync("fgts", ["validate", "--manifest", result.manifestPath], {
      encoding: "utf-8",
    });
    expect(proc.error).toBeUndefined();
    expect(proc.stderr).toBe("");
    expect(proc.stdout.trim()).toBe("OK");
    expect(proc.status).toBe(0);
  });

  it("repeat extraction of one image agrees within 1e-4", () => {
    const outA = path.join(workDir, "repA");
    const outB = path.join(workDir, "repB");
    runExtract({ manifest: manifestPath, out: outA, model: "rp16-64", batch: 1 });
    runExtract({ manifest: manifestPath, out: outB, model: "rp16-64", batch: 32 });
    const a = decodeFeatureFile(fs.readFileSync(path.join(outA, "s00.fgts")));
    const b = decodeFeatureFile(fs.readFileSync(path.join(outB, "s00.fgts")));
    expect(maxAbsDiff(a.data, b.data)).toBeLessThanOrEqual(1e-4);
  });

  it("decodes png and jpeg images", () => {
    const img = decodeImage(path.join(workDir, "images", "s00.png"));
    expect(img.width).toBe(64);
    expect(img.data.length).toBe(64 * 64 * 3);
  });

  it("exits 2 on bad flags and 1 on unknown model", () => {
    expect(main(["--bogus"])).toBe(2);
    expect(main(["--manifest", manifestPath, "--out", path.join(workDir, "x"), "--model", "nope"])).toBe(1);
  });
});
