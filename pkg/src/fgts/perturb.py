"""Image-domain perturbation engine.

Operations over float RGB images in [0,1] (numpy arrays of shape (H, W, 3)):
ideal radial low/high-pass DFT filters, patch masking and local patch
shuffling on the 16-px ViT grid, the three joint frequency/spatial conditions,
robustness corruptions (Gaussian noise, JPEG, resize cycle), and log-magnitude
spectrum export.

All seeded ops are bit-reproducible given (seed, parameters, input). Public
ops clamp to [0,1] on output; pass clamp=False where a pre-clamp result is
needed (energy oracles, composition checks).
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image

PATCH = 16  # ViT-16 tokenization: 224x224 -> 14x14 patch grid
STANDARD_SIZE = 224


class PerturbError(ValueError):
    """Raised for images that do not fit an operation's grid requirements."""


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise PerturbError("expected an (H, W, 3) image array")
    return img


def _clamp(img: np.ndarray, clamp: bool) -> np.ndarray:
    return np.clip(img, 0.0, 1.0) if clamp else img


def load_image(path: str | Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(img: np.ndarray, path: str | Path) -> None:
    arr = np.clip(np.round(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def derive_seed(seed: int, sample_id: str) -> int:
    """Stable per-sample RNG stream so parallel order never changes outputs."""
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# frequency-domain filters


def _radial_passband(h: int, w: int, r: float) -> np.ndarray:
    """Boolean low-pass mask on the center-shifted spectrum.

    Keeps radial distance <= r * (min(h, w)/2) from the (h//2, w//2) bin; r=1
    is the full passband (identity filter). DC always belongs to the low band.
    """
    if r <= 0 or r > 1:
        raise PerturbError("cutoff ratio r must be in (0, 1]")
    if r == 1.0:
        return np.ones((h, w), dtype=bool)
    yy = np.arange(h)[:, None] - h // 2
    xx = np.arange(w)[None, :] - w // 2
    radius = r * (min(h, w) / 2.0)
    return yy**2 + xx**2 <= radius**2


def _apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if mask.all():  # full passband: identity, skip the FFT round-trip
        return img.copy()
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        spec = np.fft.fftshift(np.fft.fft2(img[:, :, c]))
        out[:, :, c] = np.real(np.fft.ifft2(np.fft.ifftshift(spec * mask)))
    return out


def lowpass(img: np.ndarray, r: float, clamp: bool = True) -> np.ndarray:
    """Ideal radial low-pass at cutoff ratio r."""
    img = _check_image(img)
    mask = _radial_passband(img.shape[0], img.shape[1], r)
    return _clamp(_apply_mask(img, mask), clamp)


def highpass(img: np.ndarray, r: float, clamp: bool = True) -> np.ndarray:
    """Complement of lowpass (strictly outside the passband)."""
    img = _check_image(img)
    mask = ~_radial_passband(img.shape[0], img.shape[1], r)
    return _clamp(_apply_mask(img, mask), clamp)


# ---------------------------------------------------------------------------
# spatial patch operations


def _patch_grid(img: np.ndarray) -> tuple[int, int]:
    h, w, _ = img.shape
    if h % PATCH or w % PATCH:
        raise PerturbError(f"image dims must be divisible by {PATCH}")
    return h // PATCH, w // PATCH


def random_mask(img: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Replace a seeded random subset of 16-px patches with their own
    per-channel mean; the masked count is round(fraction * n_patches)."""
    img = _check_image(img)
    if not 0.0 <= fraction <= 1.0:
        raise PerturbError("fraction must be in [0, 1]")
    gh, gw = _patch_grid(img)
    n = gh * gw
    count = int(np.floor(fraction * n + 0.5))
    out = img.copy()
    if count == 0:
        return _clamp(out, True)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=count, replace=False)
    for flat in chosen:
        gi, gj = divmod(int(flat), gw)
        block = out[gi * PATCH : (gi + 1) * PATCH, gj * PATCH : (gj + 1) * PATCH, :]
        block[:] = block.mean(axis=(0, 1), keepdims=True)
    return _clamp(out, True)


def _ceil_tiles(n: int, width: int) -> list[range]:
    """Partition range(n) into tiles of `width`; remainder tile is smaller."""
    return [range(s, min(s + width, n)) for s in range(0, n, width)]


def local_shuffle(img: np.ndarray, window_w: int = 4, seed: int = 0) -> np.ndarray:
    """Permute 16-px patch positions within window_w x window_w neighborhoods.

    Neighborhoods tile the patch grid from the top-left corner; edge
    neighborhoods are smaller (remainder tiles permuted within themselves).
    Pixels inside a patch are untouched, so the pixel multiset is preserved.
    """
    img = _check_image(img)
    if window_w < 1:
        raise PerturbError("window_w must be >= 1")
    gh, gw = _patch_grid(img)
    groups = []
    for rows in _ceil_tiles(gh, window_w):
        for cols in _ceil_tiles(gw, window_w):
            groups.append([(i, j) for i in rows for j in cols])
    return _shuffle_patch_groups(img, groups, seed)


def full_shuffle(img: np.ndarray, seed: int = 0) -> np.ndarray:
    """Permute every patch position across the whole grid."""
    img = _check_image(img)
    gh, gw = _patch_grid(img)
    return local_shuffle(img, window_w=max(gh, gw), seed=seed)


def _shuffle_patch_groups(img: np.ndarray, groups: list[list[tuple[int, int]]], seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = img.copy()
    for group in groups:
        if len(group) < 2:
            continue
        perm = rng.permutation(len(group))
        for dst_idx, src_idx in enumerate(perm):
            di, dj = group[dst_idx]
            si, sj = group[src_idx]
            out[di * PATCH : (di + 1) * PATCH, dj * PATCH : (dj + 1) * PATCH, :] = img[
                si * PATCH : (si + 1) * PATCH, sj * PATCH : (sj + 1) * PATCH, :
            ]
    return out


# ---------------------------------------------------------------------------
# joint frequency/spatial conditions


def _blockwise_lowpass(img: np.ndarray, r: float, block: int, clamp: bool) -> np.ndarray:
    h, w, _ = img.shape
    if h % block or w % block:
        raise PerturbError(f"image dims must be divisible by block={block}")
    out = np.empty_like(img)
    mask = _radial_passband(block, block, r)
    for bi in range(0, h, block):
        for bj in range(0, w, block):
            tile = img[bi : bi + block, bj : bj + block, :]
            out[bi : bi + block, bj : bj + block, :] = _apply_mask(tile, mask)
    return _clamp(out, clamp)


def condition_a(img: np.ndarray, r: float, seed: int) -> np.ndarray:
    """Global low-pass followed by complete patch shuffling."""
    return full_shuffle(lowpass(img, r), seed=seed)


def _block_patch_groups(img: np.ndarray, block: int) -> list[list[tuple[int, int]]]:
    """Group grid cells by the pixel tile containing each patch's top-left
    corner (tiles need not align with patch boundaries)."""
    gh, gw = _patch_grid(img)
    by_tile: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for i in range(gh):
        for j in range(gw):
            key = ((i * PATCH) // block, (j * PATCH) // block)
            by_tile.setdefault(key, []).append((i, j))
    return [by_tile[k] for k in sorted(by_tile)]


def condition_b(img: np.ndarray, r: float, block: int = 56, seed: int = 0) -> np.ndarray:
    """Block-wise low-pass with intra-block patch shuffling."""
    img = _check_image(img)
    filtered = _blockwise_lowpass(img, r, block, clamp=True)
    return _shuffle_patch_groups(filtered, _block_patch_groups(filtered, block), seed)


def condition_c(img: np.ndarray, r: float, block: int = 56, clamp: bool = True) -> np.ndarray:
    """Block-wise low-pass only (control)."""
    img = _check_image(img)
    return _blockwise_lowpass(img, r, block, clamp=clamp)


# ---------------------------------------------------------------------------
# robustness corruptions


def gaussian_noise(img: np.ndarray, sigma_255: float, seed: int, clamp: bool = True) -> np.ndarray:
    """Add i.i.d. Gaussian noise with std sigma_255 on the 0..255 scale."""
    img = _check_image(img)
    if sigma_255 < 0:
        raise PerturbError("sigma must be >= 0")
    if sigma_255 == 0:
        return _clamp(img.copy(), clamp)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma_255 / 255.0, size=img.shape)
    return _clamp(img + noise, clamp)


def jpeg_compress(img: np.ndarray, quality: int) -> np.ndarray:
    """Round-trip through baseline JPEG (4:2:0 chroma subsampling)."""
    img = _check_image(img)
    if not 1 <= quality <= 100:
        raise PerturbError("quality must be in [1, 100]")
    arr = np.clip(np.round(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="JPEG", quality=quality, subsampling=2)
    buf.seek(0)
    back = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64)
    return back / 255.0


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Center-aligned bilinear resample; exact identity at equal sizes."""
    h, w, c = img.shape
    if (out_h, out_w) == (h, w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_cycle(img: np.ndarray, factor: float, clamp: bool = True) -> np.ndarray:
    """Bilinear downsample by `factor`, then upsample back to the input size."""
    img = _check_image(img)
    if not 0.0 < factor <= 1.0:
        raise PerturbError("factor must be in (0, 1]")
    h, w, _ = img.shape
    if factor == 1.0:
        return _clamp(img.copy(), clamp)
    small_h = max(1, int(round(h * factor)))
    small_w = max(1, int(round(w * factor)))
    small = _bilinear_resize(img, small_h, small_w)
    return _clamp(_bilinear_resize(small, h, w), clamp)


# ---------------------------------------------------------------------------
# spectrum export


def spectrum(img: np.ndarray) -> np.ndarray:
    """log(1+|F|) of the center-shifted DFT magnitude, averaged over channels."""
    img = _check_image(img)
    acc = np.zeros(img.shape[:2])
    for c in range(3):
        mag = np.abs(np.fft.fftshift(np.fft.fft2(img[:, :, c])))
        acc += np.log1p(mag)
    return acc / 3.0


def spectrum_to_csv(grid: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, grid, delimiter=",", fmt="%.9g")


def spectrum_to_png(grid: np.ndarray, path: str | Path) -> None:
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        norm = (grid - lo) / (hi - lo)
    else:
        norm = np.zeros_like(grid)
    Image.fromarray(np.round(norm * 255.0).astype(np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# spec-driven dispatch (used by the CLI and the harness sweeps)


def apply_spec(img: np.ndarray, spec: dict, seed: int = 0) -> np.ndarray:
    """Apply a perturbation described as {"kind": ..., params...}."""
    kind = spec["kind"]
    if kind == "identity":
        return np.clip(img.copy(), 0.0, 1.0)
    if kind == "lowpass":
        return lowpass(img, float(spec["r"]))
    if kind == "highpass":
        return highpass(img, float(spec["r"]))
    if kind == "mask":
        return random_mask(img, float(spec["fraction"]), int(spec.get("seed", seed)))
    if kind == "shuffle":
        return local_shuffle(img, int(spec.get("window_w", 4)), int(spec.get("seed", seed)))
    if kind == "cond_a":
        return condition_a(img, float(spec["r"]), int(spec.get("seed", seed)))
    if kind == "cond_b":
        return condition_b(img, float(spec["r"]), int(spec.get("block", 56)), int(spec.get("seed", seed)))
    if kind == "cond_c":
        return condition_c(img, float(spec["r"]), int(spec.get("block", 56)))
    if kind == "gaussian":
        return gaussian_noise(img, float(spec["sigma_255"]), int(spec.get("seed", seed)))
    if kind == "jpeg":
        return jpeg_compress(img, int(spec["quality"]))
    if kind == "resize":
        return resize_cycle(img, float(spec["factor"]))
    raise PerturbError(f"unknown perturbation kind {kind!r}")
