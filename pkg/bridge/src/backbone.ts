/**
 * Deterministic frozen feature backbone.
 *
 * No pretrained weights ship with this package; each model id names a frozen
 * random-projection network whose weights are derived deterministically from
 * the id, so extraction is fully reproducible across machines and runs.
 * Images are resized to the model's input size, normalized, split into 16-px
 * patches, and projected to the feature dimension; a CLS token summarizes all
 * patches and four register tokens summarize the grid quadrants. Token order
 * in the output is CLS, registers, then patches row-major.
 */

import * as crypto from "node:crypto";
import * as tf from "@tensorflow/tfjs";
import type { FeatureTensor, TokenLayout } from "./format.js";

export interface ModelSpec {
  id: string;
  inputSize: number;
  patchSize: number;
  dim: number;
  layout: TokenLayout;
  /** provenance note stored in the output manifest header */
  featureTap: string;
}

const GRID = 14;
const PATCH = 16;

export const MODELS: Record<string, Omit<ModelSpec, "id">> = {
  "rp16-64": {
    inputSize: 224,
    patchSize: PATCH,
    dim: 64,
    layout: { n_cls: 1, n_reg: 4, grid_h: GRID, grid_w: GRID },
    featureTap: "deterministic seeded projection, post-activation",
  },
  "rp16-128": {
    inputSize: 224,
    patchSize: PATCH,
    dim: 128,
    layout: { n_cls: 1, n_reg: 4, grid_h: GRID, grid_w: GRID },
    featureTap: "deterministic seeded projection, post-activation",
  },
};

export function resolveModel(id: string): ModelSpec {
  const spec = MODELS[id];
  if (!spec) {
    throw new Error(`unknown model id ${JSON.stringify(id)}; known: ${Object.keys(MODELS).join(", ")}`);
  }
  return { id, ...spec };
}

/** sfc32 PRNG seeded from a sha256 digest; stable across platforms. */
function seededRng(key: string): () => number {
  const digest = crypto.createHash("sha256").update(key).digest();
  let a = digest.readUInt32LE(0);
  let b = digest.readUInt32LE(4);
  let c = digest.readUInt32LE(8);
  let d = digest.readUInt32LE(12);
  return () => {
    a >>>= 0; b >>>= 0; c >>>= 0; d >>>= 0;
    let t = (a + b) | 0;
    a = b ^ (b >>> 9);
    b = (c + (c << 3)) | 0;
    c = (c << 21) | (c >>> 11);
    d = (d + 1) | 0;
    t = (t + d) | 0;
    c = (c + t) | 0;
    return (t >>> 0) / 4294967296;
  };
}

/** Gaussian(0, 1/sqrt(fanIn)) weight matrix derived from the model id. */
function frozenWeights(modelId: string, role: string, fanIn: number, fanOut: number): tf.Tensor2D {
  const rng = seededRng(`${modelId}:${role}`);
  const scale = 1 / Math.sqrt(fanIn);
  const data = new Float32Array(fanIn * fanOut);
  for (let i = 0; i < data.length; i += 2) {
    // Box-Muller
    const u = Math.max(rng(), 1e-12);
    const v = rng();
    const r = Math.sqrt(-2 * Math.log(u));
    data[i] = Math.fround(r * Math.cos(2 * Math.PI * v) * scale);
    if (i + 1 < data.length) {
      data[i + 1] = Math.fround(r * Math.sin(2 * Math.PI * v) * scale);
    }
  }
  return tf.tensor2d(data, [fanIn, fanOut]);
}

export class FrozenBackbone {
  readonly spec: ModelSpec;
  private wPatch: tf.Tensor2D;
  private wCls: tf.Tensor2D;
  private wReg: tf.Tensor2D;

  constructor(modelId: string) {
    this.spec = resolveModel(modelId);
    const patchDim = this.spec.patchSize * this.spec.patchSize * 3;
    this.wPatch = frozenWeights(modelId, "patch", patchDim, this.spec.dim);
    this.wCls = frozenWeights(modelId, "cls", this.spec.dim, this.spec.dim);
    this.wReg = frozenWeights(modelId, "reg", this.spec.dim, this.spec.dim);
  }

  dispose(): void {
    this.wPatch.dispose();
    this.wCls.dispose();
    this.wReg.dispose();
  }

  /**
   * Extract token features for a batch of decoded RGB images.
   * Per-sample outputs are independent of batch composition: every op is an
   * elementwise map or a per-row matMul with a fixed accumulation order.
   */
  extractBatch(images: DecodedImage[]): FeatureTensor[] {
    return images.map((img) => this.extractOne(img));
  }

  extractOne(img: DecodedImage): FeatureTensor {
    const { inputSize, dim, layout } = this.spec;
    const data = tf.tidy(() => {
      let x = tf.tensor3d(img.data, [img.height, img.width, 3]);
      if (img.height !== inputSize || img.width !== inputSize) {
        x = tf.image.resizeBilinear(x, [inputSize, inputSize], false, true);
      }
      x = x.sub(0.5).div(0.5); // normalize to [-1, 1]
      // (H, W, 3) -> (grid_h, P, grid_w, P, 3) -> (n_patch, P*P*3)
      const patches = x
        .reshape([GRID, PATCH, GRID, PATCH, 3])
        .transpose([0, 2, 1, 3, 4])
        .reshape([GRID * GRID, PATCH * PATCH * 3]);
      const patchTokens = tf.tanh(tf.matMul(patches, this.wPatch)); // (196, dim)
      const cls = tf.tanh(tf.matMul(patchTokens.mean(0, true), this.wCls)); // (1, dim)
      // quadrant means over the patch grid -> 4 register tokens
      const quad = patchTokens
        .reshape([2, GRID / 2, 2, GRID / 2, dim])
        .transpose([0, 2, 1, 3, 4])
        .reshape([4, (GRID / 2) * (GRID / 2), dim])
        .mean(1); // (4, dim)
      const registers = tf.tanh(tf.matMul(quad, this.wReg));
      return tf.concat([cls, registers, patchTokens], 0); // (201, dim)
    });
    const out = data.dataSync() as Float32Array;
    data.dispose();
    return { layout, dim, data: new Float32Array(out) };
  }
}

export interface DecodedImage {
  width: number;
  height: number;
  /** RGB float32 in [0, 1], row-major HxWx3 */
  data: Float32Array;
}
