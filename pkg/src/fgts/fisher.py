"""Fisher token ranking and top-K aggregation.

Stage 1 scores every scored token by the ratio of squared class-mean gap to
summed class variances (computed per feature dimension, averaged over
dimensions) and stores the descending index list. Stage 2 picks the top-K
indices (or a seeded random-K baseline) and averages the selected token rows
into a single embedding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feature_store import FeatureTensor, TokenLayout, strategy_indices

DEFAULT_EPS = 1e-12
DEFAULT_K = 10


class FisherError(ValueError):
    """Raised for invalid ranking/selection inputs."""


@dataclass
class ClassStats:
    """Per-token per-dimension sample mean and unbiased variance per class."""

    mean_real: np.ndarray  # (T, D)
    var_real: np.ndarray
    mean_fake: np.ndarray
    var_fake: np.ndarray
    n_real: int
    n_fake: int
    token_indices: list[int]  # global token indices of the T scored rows
    layout: TokenLayout

    def __post_init__(self):
        if self.n_real < 2 or self.n_fake < 2:
            raise FisherError("need >= 2 samples per class for sample variance")
        if np.any(self.var_real < 0) or np.any(self.var_fake < 0):
            raise FisherError("negative variance")


@dataclass
class TokenRanking:
    """Per-token scores with the descending index list.

    ``sorted_indices`` holds global token indices, ties broken by ascending
    index. ``scores`` aligns with ``token_indices`` (ascending global order).
    """

    scores: np.ndarray
    token_indices: list[int]
    sorted_indices: list[int]
    layout: TokenLayout
    ranking_scope: str = "patch_only"

    def score_of(self, token_index: int) -> float:
        return float(self.scores[self.token_indices.index(token_index)])

    def to_json_dict(self, k_default: int = DEFAULT_K) -> dict:
        return {
            "scope": self.ranking_scope,
            "layout": self.layout.to_dict(),
            "token_indices": list(self.token_indices),
            "scores": [float(s) for s in self.scores],
            "sorted_indices": list(self.sorted_indices),
            "k_default": k_default,
        }

    def save(self, path: str | Path, k_default: int = DEFAULT_K) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(k_default), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "TokenRanking":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(
            scores=np.asarray(obj["scores"], dtype=np.float64),
            token_indices=[int(i) for i in obj["token_indices"]],
            sorted_indices=[int(i) for i in obj["sorted_indices"]],
            layout=TokenLayout.from_dict(obj["layout"]),
            ranking_scope=str(obj["scope"]),
        )


@dataclass
class SelectionConfig:
    k: int = DEFAULT_K
    strategy: str = "fisher_topk"  # or "random_k"
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("fisher_topk", "random_k"):
            raise FisherError(f"unknown selection strategy {self.strategy!r}")
        if self.k < 1:
            raise FisherError("K must be >= 1")


@dataclass
class Embedding:
    z_out: np.ndarray
    token_indices: list[int] = field(default_factory=list)


def compute_class_stats(
    tensors: list[FeatureTensor],
    labels: list[str],
    scope: str | list[int] = "patch",
) -> ClassStats:
    """Accumulate per-class token statistics over a labeled reference set.

    Uses the unbiased (n-1) variance estimator. All tensors must share one
    layout and feature dimension.
    """
    if len(tensors) != len(labels):
        raise FisherError("tensors and labels length mismatch")
    if not tensors:
        raise FisherError("empty reference set")
    layout = tensors[0].layout
    dim = tensors[0].dim
    for t in tensors:
        if t.layout != layout or t.dim != dim:
            raise FisherError("mixed layouts or dims in reference set")
    idx = strategy_indices(layout, scope)
    stacks = {"real": [], "fake": []}
    for t, lab in zip(tensors, labels):
        if lab not in stacks:
            raise FisherError(f"unknown label {lab!r}")
        stacks[lab].append(t.data[idx, :])
    for lab, rows in stacks.items():
        if len(rows) < 2:
            raise FisherError(f"class {lab!r} has {len(rows)} samples; need >= 2")
    real = np.stack(stacks["real"]).astype(np.float64)  # (n, T, D)
    fake = np.stack(stacks["fake"]).astype(np.float64)
    return ClassStats(
        mean_real=real.mean(axis=0),
        var_real=real.var(axis=0, ddof=1),
        mean_fake=fake.mean(axis=0),
        var_fake=fake.var(axis=0, ddof=1),
        n_real=real.shape[0],
        n_fake=fake.shape[0],
        token_indices=idx,
        layout=layout,
    )


def fisher_scores(stats: ClassStats, eps: float = DEFAULT_EPS, scope_name: str = "patch_only") -> TokenRanking:
    """Score tokens by discriminability: squared mean gap over summed variance.

    The ratio is computed per feature dimension and averaged over dimensions;
    the token score reduces to the scalar formula at D=1. Sort is descending
    with deterministic ascending-index tie-break.
    """
    num = (stats.mean_real - stats.mean_fake) ** 2
    den = stats.var_real + stats.var_fake + eps
    per_dim = num / den  # (T, D)
    scores = per_dim.mean(axis=1)  # (T,)
    token_idx = np.asarray(stats.token_indices)
    # descending score, ascending token index on ties
    order = np.lexsort((token_idx, -scores))
    return TokenRanking(
        scores=scores,
        token_indices=list(stats.token_indices),
        sorted_indices=[int(token_idx[i]) for i in order],
        layout=stats.layout,
        ranking_scope=scope_name,
    )


def select_top_k(ranking: TokenRanking, cfg: SelectionConfig) -> list[int]:
    """Top-K of the sorted list, or a seeded K-subset of the scored set."""
    n = len(ranking.sorted_indices)
    if not 1 <= cfg.k <= n:
        raise FisherError(f"K={cfg.k} out of range [1,{n}]")
    if cfg.strategy == "fisher_topk":
        return list(ranking.sorted_indices[: cfg.k])
    rng = np.random.default_rng(cfg.seed)
    pool = np.asarray(sorted(ranking.token_indices))
    return [int(i) for i in rng.choice(pool, size=cfg.k, replace=False)]


def aggregate(tensor: FeatureTensor, indices: list[int]) -> Embedding:
    """Average the selected token rows into one embedding vector."""
    if len(indices) == 0:
        raise FisherError("empty index list")
    for i in indices:
        if not 0 <= i < tensor.layout.n_tokens:
            raise FisherError(f"token index {i} out of range")
    z = tensor.data[list(indices), :].astype(np.float64).mean(axis=0)
    return Embedding(z_out=z, token_indices=list(indices))


def embed_many(tensors: list[FeatureTensor], indices: list[int]) -> np.ndarray:
    """Stacked embeddings (n, D) for a list of tensors over one index set."""
    return np.stack([aggregate(t, indices).z_out for t in tensors])
