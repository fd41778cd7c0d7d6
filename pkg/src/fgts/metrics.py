"""Exact accuracy / ROC-AUC / average-precision used by every results table.

Positive class is fake throughout: higher scores mean more likely fake, and a
zero score classifies fake. AUC is the Mann-Whitney statistic with
average-rank tie handling; AP is the un-interpolated step definition computed
in exact rational arithmetic so results are independent of summation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .classifiers import LABEL_FAKE, LABEL_REAL


class MetricError(ValueError):
    """Raised for empty or single-class metric inputs."""


@dataclass(frozen=True)
class ScoredSample:
    score: float
    label: str  # "real" | "fake"
    generator: str = "-"

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise MetricError("non-finite score")
        if self.label not in (LABEL_REAL, LABEL_FAKE):
            raise MetricError(f"unknown label {self.label!r}")


def accuracy(samples: list[ScoredSample]) -> float:
    """Fraction of samples whose thresholded score matches the true label."""
    if not samples:
        raise MetricError("empty input")
    correct = 0
    for s in samples:
        predicted = LABEL_FAKE if s.score >= 0 else LABEL_REAL
        correct += predicted == s.label
    return correct / len(samples)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their block."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # average of 1-based ranks i+1 .. j+1
        avg = (i + j + 2) / 2.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def roc_auc(samples: list[ScoredSample]) -> float:
    """Mann-Whitney AUC with fake as the positive class."""
    scores = np.asarray([s.score for s in samples], dtype=np.float64)
    is_fake = np.asarray([s.label == LABEL_FAKE for s in samples])
    n_f = int(is_fake.sum())
    n_r = len(samples) - n_f
    if n_f == 0 or n_r == 0:
        raise MetricError("roc_auc needs at least one sample of each class")
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[is_fake].sum())
    return (rank_sum - n_f * (n_f + 1) / 2.0) / (n_f * n_r)


def average_precision(samples: list[ScoredSample]) -> float:
    """Un-interpolated AP: sum of (recall step) * precision at each cut point.

    Sorted by score descending with ties kept in stable input order. Computed
    with Fractions and rounded once at the end, so the value is exact.
    """
    if not samples:
        raise MetricError("empty input")
    n_pos = sum(s.label == LABEL_FAKE for s in samples)
    if n_pos == 0:
        raise MetricError("average_precision needs at least one fake sample")
    scores = np.asarray([s.score for s in samples], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    ap = Fraction(0)
    tp = 0
    for rank, idx in enumerate(order, start=1):
        if samples[idx].label == LABEL_FAKE:
            tp += 1
            ap += Fraction(1, n_pos) * Fraction(tp, rank)
    return float(ap)


@dataclass(frozen=True)
class MetricTriple:
    acc: float
    auc: float
    ap: float
    n_fake: int
    n_real: int


def compute_triple(samples: list[ScoredSample]) -> MetricTriple:
    return MetricTriple(
        acc=accuracy(samples),
        auc=roc_auc(samples),
        ap=average_precision(samples),
        n_fake=sum(s.label == LABEL_FAKE for s in samples),
        n_real=sum(s.label == LABEL_REAL for s in samples),
    )


def group_by_generator(samples: list[ScoredSample]) -> dict[str, MetricTriple]:
    """Per-generator metrics plus an unweighted-mean aggregate row.

    Each generator column pairs that generator's fakes with the shared real
    pool. The aggregate under key "__mean__" is the unweighted mean over
    generator columns.
    """
    if not samples:
        raise MetricError("empty input")
    reals = [s for s in samples if s.label == LABEL_REAL]
    generators: list[str] = []
    for s in samples:
        if s.label == LABEL_FAKE and s.generator not in generators:
            generators.append(s.generator)
    out: dict[str, MetricTriple] = {}
    for gen in generators:
        fakes = [s for s in samples if s.label == LABEL_FAKE and s.generator == gen]
        out[gen] = compute_triple(fakes + reals)
    if generators:
        out["__mean__"] = MetricTriple(
            acc=float(np.mean([out[g].acc for g in generators])),
            auc=float(np.mean([out[g].auc for g in generators])),
            ap=float(np.mean([out[g].ap for g in generators])),
            n_fake=sum(out[g].n_fake for g in generators),
            n_real=len(reals),
        )
    return out
