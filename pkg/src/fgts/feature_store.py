"""On-disk feature files and dataset manifests.

Responsibilities:
- Binary token-feature container (magic ``FGTS``, versioned, self-describing
  JSON header, little-endian float32 payload) with bit-exact roundtrips.
- JSONL sample manifests binding images/features to labels, generator ids and
  the seen/unseen generator partition.
- Token-subset selection by named strategy (cls / reg / patch / combinations).

Malformed inputs are rejected, never repaired.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FGTS"
FORMAT_VERSION = 1

REAL_GENERATOR = "-"

TOKEN_STRATEGIES = ("all", "cls", "reg", "patch", "cls+reg", "cls+patch")


class FeatureStoreError(ValueError):
    """Raised for malformed feature files or manifests."""


@dataclass(frozen=True)
class TokenLayout:
    """Token arrangement of one backbone: CLS tokens, then registers, then
    grid_h x grid_w patch tokens stored row-major."""

    n_cls: int = 1
    n_reg: int = 4
    grid_h: int = 14
    grid_w: int = 14

    def __post_init__(self):
        if self.n_cls < 0 or self.n_reg < 0:
            raise FeatureStoreError("n_cls and n_reg must be >= 0")
        if self.grid_h * self.grid_w < 1:
            raise FeatureStoreError("patch grid must contain at least one token")

    @property
    def n_patch(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def n_tokens(self) -> int:
        return self.n_cls + self.n_reg + self.n_patch

    def cls_indices(self) -> list[int]:
        return list(range(self.n_cls))

    def reg_indices(self) -> list[int]:
        return list(range(self.n_cls, self.n_cls + self.n_reg))

    def patch_indices(self) -> list[int]:
        start = self.n_cls + self.n_reg
        return list(range(start, start + self.n_patch))

    def to_dict(self) -> dict:
        return {
            "n_cls": self.n_cls,
            "n_reg": self.n_reg,
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenLayout":
        try:
            return cls(
                n_cls=int(d["n_cls"]),
                n_reg=int(d["n_reg"]),
                grid_h=int(d["grid_h"]),
                grid_w=int(d["grid_w"]),
            )
        except KeyError as exc:
            raise FeatureStoreError(f"layout missing field {exc}") from exc


@dataclass
class FeatureTensor:
    """Token features of one image: N tokens x D dims, float32."""

    layout: TokenLayout
    data: np.ndarray  # (N, D) float32

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise FeatureStoreError("feature data must be a 2-D matrix")
        if self.data.shape[0] != self.layout.n_tokens:
            raise FeatureStoreError(
                f"row count {self.data.shape[0]} does not match layout "
                f"token count {self.layout.n_tokens}"
            )
        if self.data.shape[1] < 1:
            raise FeatureStoreError("feature dimension must be positive")
        if not np.all(np.isfinite(self.data)):
            tok, dim = np.argwhere(~np.isfinite(self.data))[0]
            raise FeatureStoreError(f"non-finite value at ({tok},{dim})")

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])


def write_feature_file(tensor: FeatureTensor, path: str | Path, meta: dict | None = None) -> None:
    """Write a tensor to ``path`` in the FGTS binary format.

    Header is length-prefixed UTF-8 JSON; payload is row-major float32 LE.
    Read-back is bit-exact.
    """
    header = dict(tensor.layout.to_dict())
    header["dim"] = tensor.dim
    if meta is not None:
        header["meta"] = meta
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_feature_file(path: str | Path) -> FeatureTensor:
    """Read and validate an FGTS feature file.

    Checks magic, version, header arithmetic and payload length before
    constructing the tensor.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10:
        raise FeatureStoreError("truncated header")
    if blob[:4] != MAGIC:
        raise FeatureStoreError("bad magic")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != FORMAT_VERSION:
        raise FeatureStoreError(f"version mismatch: got {version}, expected {FORMAT_VERSION}")
    (header_len,) = struct.unpack("<I", blob[6:10])
    if len(blob) < 10 + header_len:
        raise FeatureStoreError("truncated header")
    try:
        header = json.loads(blob[10 : 10 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FeatureStoreError(f"unparseable header: {exc}") from exc
    layout = TokenLayout.from_dict(header)
    try:
        dim = int(header["dim"])
    except KeyError as exc:
        raise FeatureStoreError("header missing dim") from exc
    if dim < 1:
        raise FeatureStoreError("header dim must be positive")
    expected = layout.n_tokens * dim * 4
    payload = blob[10 + header_len :]
    if len(payload) < expected:
        raise FeatureStoreError("truncated payload")
    if len(payload) > expected:
        raise FeatureStoreError("payload length mismatch: trailing bytes")
    data = np.frombuffer(payload, dtype="<f4").reshape(layout.n_tokens, dim)
    return FeatureTensor(layout=layout, data=data.copy())


def read_feature_meta(path: str | Path) -> dict | None:
    """Return the free-form ``meta`` header object of a feature file, if any."""
    with open(path, "rb") as fh:
        head = fh.read(10)
        if len(head) < 10 or head[:4] != MAGIC:
            raise FeatureStoreError("bad magic")
        (header_len,) = struct.unpack("<I", head[6:10])
        header = json.loads(fh.read(header_len).decode("utf-8"))
    return header.get("meta")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    feature_path: str
    label: str  # "real" | "fake"
    generator: str  # "-" for real
    split: str  # "reference" | "eval"
    image_path: str | None = None

    def __post_init__(self):
        if self.label not in ("real", "fake"):
            raise FeatureStoreError(f"unknown label token {self.label!r}")
        if self.split not in ("reference", "eval"):
            raise FeatureStoreError(f"unknown split token {self.split!r}")
        if self.label == "real" and self.generator != REAL_GENERATOR:
            raise FeatureStoreError(
                f"real record {self.sample_id!r} must use generator {REAL_GENERATOR!r}"
            )
        if self.label == "fake" and self.generator == REAL_GENERATOR:
            raise FeatureStoreError(f"fake record {self.sample_id!r} lacks a generator id")


@dataclass
class SampleManifest:
    records: list[SampleRecord]
    layout: TokenLayout
    dim: int
    seen_generators: set[str] = field(default_factory=set)
    unseen_generators: set[str] = field(default_factory=set)

    def __post_init__(self):
        overlap = self.seen_generators & self.unseen_generators
        if overlap:
            raise FeatureStoreError(
                f"generator partition overlap: {sorted(overlap)}"
            )
        known = self.seen_generators | self.unseen_generators
        for rec in self.records:
            if rec.label == "fake" and rec.generator not in known:
                raise FeatureStoreError(
                    f"generator {rec.generator!r} is in neither the seen nor unseen set"
                )

    def subset(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def generators(self) -> list[str]:
        seen = []
        for rec in self.records:
            if rec.label == "fake" and rec.generator not in seen:
                seen.append(rec.generator)
        return seen


def load_manifest(path: str | Path) -> SampleManifest:
    """Parse a JSONL manifest: header object on line 1, one record per line.

    Rejects duplicate sample ids, unknown labels and seen/unseen overlap.
    Record order is preserved.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if not lines:
        raise FeatureStoreError("empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FeatureStoreError(f"unparseable manifest header: {exc}") from exc
    layout = TokenLayout.from_dict(header.get("layout", {}))
    dim = int(header.get("dim", 0))
    if dim < 1:
        raise FeatureStoreError("manifest header must declare a positive dim")
    records: list[SampleRecord] = []
    ids: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FeatureStoreError(f"line {lineno}: unparseable record: {exc}") from exc
        try:
            rec = SampleRecord(
                sample_id=str(obj["sample_id"]),
                feature_path=str(obj["feature_path"]),
                label=str(obj["label"]),
                generator=str(obj.get("generator", REAL_GENERATOR)),
                split=str(obj.get("split", "eval")),
                image_path=obj.get("image_path"),
            )
        except KeyError as exc:
            raise FeatureStoreError(f"line {lineno}: record missing field {exc}") from exc
        if rec.sample_id in ids:
            raise FeatureStoreError(f"duplicate id {rec.sample_id!r}")
        ids.add(rec.sample_id)
        records.append(rec)
    return SampleManifest(
        records=records,
        layout=layout,
        dim=dim,
        seen_generators=set(header.get("seen_generators", [])),
        unseen_generators=set(header.get("unseen_generators", [])),
    )


def save_manifest(manifest: SampleManifest, path: str | Path) -> None:
    """Inverse of load_manifest; emits deterministic JSONL."""
    header = {
        "layout": manifest.layout.to_dict(),
        "dim": manifest.dim,
        "seen_generators": sorted(manifest.seen_generators),
        "unseen_generators": sorted(manifest.unseen_generators),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in manifest.records:
            obj = {
                "sample_id": rec.sample_id,
                "feature_path": rec.feature_path,
                "label": rec.label,
                "generator": rec.generator,
                "split": rec.split,
            }
            if rec.image_path is not None:
                obj["image_path"] = rec.image_path
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def strategy_indices(layout: TokenLayout, strategy: str | list[int]) -> list[int]:
    """Row indices named by a token strategy, in ascending token order."""
    if isinstance(strategy, (list, tuple, np.ndarray)):
        indices = [int(i) for i in strategy]
        for i in indices:
            if not 0 <= i < layout.n_tokens:
                raise FeatureStoreError(f"token index {i} out of range [0,{layout.n_tokens})")
        return indices
    if strategy == "all":
        return list(range(layout.n_tokens))
    if strategy == "cls":
        return layout.cls_indices()
    if strategy == "reg":
        return layout.reg_indices()
    if strategy == "patch":
        return layout.patch_indices()
    if strategy == "cls+reg":
        return layout.cls_indices() + layout.reg_indices()
    if strategy == "cls+patch":
        return layout.cls_indices() + layout.patch_indices()
    raise FeatureStoreError(f"unknown token strategy {strategy!r}")


def select_tokens(tensor: FeatureTensor, strategy: str | list[int]) -> np.ndarray:
    """Sub-matrix of token rows named by ``strategy``, order-preserving."""
    idx = strategy_indices(tensor.layout, strategy)
    return tensor.data[idx, :]


def validate_store(manifest_path: str | Path, features_dir: str | Path | None = None) -> list[str]:
    """Cross-check every record's feature file against the manifest header.

    Returns a list of human-readable problems (empty means valid).
    """
    problems: list[str] = []
    try:
        manifest = load_manifest(manifest_path)
    except FeatureStoreError as exc:
        return [f"manifest: {exc}"]
    base = Path(features_dir) if features_dir is not None else Path(manifest_path).parent
    for rec in manifest.records:
        fpath = Path(rec.feature_path)
        if not fpath.is_absolute():
            fpath = base / fpath
        try:
            tensor = read_feature_file(fpath)
        except (OSError, FeatureStoreError) as exc:
            problems.append(f"{rec.sample_id}: {exc}")
            continue
        if tensor.layout != manifest.layout:
            problems.append(f"{rec.sample_id}: layout mismatch vs manifest header")
        elif tensor.dim != manifest.dim:
            problems.append(f"{rec.sample_id}: dim {tensor.dim} != manifest dim {manifest.dim}")
    return problems


def load_features(manifest: SampleManifest, base_dir: str | Path) -> dict[str, FeatureTensor]:
    """Load every record's feature tensor keyed by sample_id."""
    base = Path(base_dir)
    out: dict[str, FeatureTensor] = {}
    for rec in manifest.records:
        fpath = Path(rec.feature_path)
        if not fpath.is_absolute():
            fpath = base / fpath
        tensor = read_feature_file(fpath)
        if tensor.layout != manifest.layout or tensor.dim != manifest.dim:
            raise FeatureStoreError(f"{rec.sample_id}: feature file disagrees with manifest header")
        out[rec.sample_id] = tensor
    return out
