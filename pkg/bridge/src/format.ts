/**
 * Binary feature-file format shared with the analysis toolkit.
 *
 * Layout (little-endian): magic "FGTS", u16 version (=1), u32 header length,
 * UTF-8 JSON header {n_cls, n_reg, grid_h, grid_w, dim}, then
 * n_tokens x dim float32 row-major payload. Token order: CLS tokens first,
 * then registers, then patches row-major.
 */

export const MAGIC = "FGTS";
export const FORMAT_VERSION = 1;

export interface TokenLayout {
  n_cls: number;
  n_reg: number;
  grid_h: number;
  grid_w: number;
}

export function nTokens(layout: TokenLayout): number {
  return layout.n_cls + layout.n_reg + layout.grid_h * layout.grid_w;
}

export interface FeatureTensor {
  layout: TokenLayout;
  dim: number;
  /** row-major (n_tokens x dim) */
  data: Float32Array;
}

export function encodeFeatureFile(tensor: FeatureTensor): Buffer {
  const { layout, dim, data } = tensor;
  const tokens = nTokens(layout);
  if (data.length !== tokens * dim) {
    throw new Error(`payload size ${data.length} != ${tokens} tokens x ${dim} dims`);
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`non-finite value at flat index ${i}`);
    }
  }
  const header = Buffer.from(
    JSON.stringify({
      n_cls: layout.n_cls,
      n_reg: layout.n_reg,
      grid_h: layout.grid_h,
      grid_w: layout.grid_w,
      dim,
    }),
    "utf-8",
  );
  const prefix = Buffer.alloc(10);
  prefix.write(MAGIC, 0, "ascii");
  prefix.writeUInt16LE(FORMAT_VERSION, 4);
  prefix.writeUInt32LE(header.length, 6);
  const payload = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) {
    payload.writeFloatLE(data[i], i * 4);
  }
  return Buffer.concat([prefix, header, payload]);
}

export function decodeFeatureFile(blob: Buffer): FeatureTensor {
  if (blob.length < 10 || blob.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error("bad magic");
  }
  const version = blob.readUInt16LE(4);
  if (version !== FORMAT_VERSION) {
    throw new Error(`version mismatch: ${version}`);
  }
  const headerLen = blob.readUInt32LE(6);
  const header = JSON.parse(blob.toString("utf-8", 10, 10 + headerLen));
  const layout: TokenLayout = {
    n_cls: header.n_cls,
    n_reg: header.n_reg,
    grid_h: header.grid_h,
    grid_w: header.grid_w,
  };
  const dim: number = header.dim;
  const expected = nTokens(layout) * dim * 4;
  const payload = blob.subarray(10 + headerLen);
  if (payload.length < expected) {
    throw new Error("truncated payload");
  }
  if (payload.length > expected) {
    throw new Error("payload length mismatch: trailing bytes");
  }
  const data = new Float32Array(nTokens(layout) * dim);
  for (let i = 0; i < data.length; i++) {
    data[i] = payload.readFloatLE(i * 4);
  }
  return { layout, dim, data };
}
