"""Classification protocols over aggregated token embeddings.

Two protocols: training-free centroid matching by cosine similarity, and a
two-logit linear probe trained with Adam on softmax cross-entropy. Scores are
oriented so that higher means more likely fake; a zero score classifies fake.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABEL_REAL = "real"
LABEL_FAKE = "fake"


class ClassifierError(ValueError):
    """Raised for degenerate training inputs or shape mismatches."""


@dataclass(frozen=True)
class Prediction:
    score: float  # higher => more fake
    label: str

    @staticmethod
    def from_score(score: float) -> "Prediction":
        # tie rule: score == 0 classifies fake
        return Prediction(score=float(score), label=LABEL_FAKE if score >= 0 else LABEL_REAL)


@dataclass
class CentroidModel:
    mu_real: np.ndarray
    mu_fake: np.ndarray
    k: int
    token_indices: list[int]

    def __post_init__(self):
        self.mu_real = np.asarray(self.mu_real, dtype=np.float64)
        self.mu_fake = np.asarray(self.mu_fake, dtype=np.float64)
        if not (np.all(np.isfinite(self.mu_real)) and np.all(np.isfinite(self.mu_fake))):
            raise ClassifierError("non-finite centroid")
        if np.linalg.norm(self.mu_real) == 0 and np.linalg.norm(self.mu_fake) == 0:
            raise ClassifierError("both centroids are zero vectors")

    def save(self, path: str | Path) -> None:
        obj = {
            "protocol": "centroid",
            "mu_real": [float(v) for v in self.mu_real],
            "mu_fake": [float(v) for v in self.mu_fake],
            "k": self.k,
            "token_indices": list(self.token_indices),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "CentroidModel":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(
            mu_real=np.asarray(obj["mu_real"]),
            mu_fake=np.asarray(obj["mu_fake"]),
            k=int(obj["k"]),
            token_indices=[int(i) for i in obj["token_indices"]],
        )


@dataclass
class TrainingMeta:
    epochs: int = 50
    lr: float = 1e-2
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
        }


def _encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _decode_f32(s: str, shape: tuple) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f4").reshape(shape).astype(np.float64)


@dataclass
class LinearProbe:
    weights: np.ndarray  # (2, D); row 0 = real logit, row 1 = fake logit
    bias: np.ndarray  # (2,)
    normalize_input: bool = True
    training_meta: TrainingMeta = field(default_factory=TrainingMeta)
    loss_history: list[float] = field(default_factory=list)
    token_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.shape[0] != 2 or self.bias.shape != (2,):
            raise ClassifierError("probe must have a 2-logit head")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ClassifierError("non-finite probe parameters")

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])

    def save(self, path: str | Path) -> None:
        obj = {
            "protocol": "probe",
            "dim": self.dim,
            "weights_f32_le_b64": _encode_f32(self.weights),
            "bias_f32_le_b64": _encode_f32(self.bias),
            "normalize_input": self.normalize_input,
            "training_meta": self.training_meta.to_dict(),
            "token_indices": list(self.token_indices),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "LinearProbe":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        dim = int(obj["dim"])
        return cls(
            weights=_decode_f32(obj["weights_f32_le_b64"], (2, dim)),
            bias=_decode_f32(obj["bias_f32_le_b64"], (2,)),
            normalize_input=bool(obj["normalize_input"]),
            training_meta=TrainingMeta(**obj["training_meta"]),
            token_indices=[int(i) for i in obj.get("token_indices", [])],
        )


def _l2_normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def fit_centroids(embeddings: np.ndarray, labels: list[str], k: int = 0, token_indices: list[int] | None = None) -> CentroidModel:
    """Arithmetic class means of the reference embeddings."""
    labels_arr = np.asarray(labels)
    real = embeddings[labels_arr == LABEL_REAL]
    fake = embeddings[labels_arr == LABEL_FAKE]
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ClassifierError("empty class in reference embeddings")
    return CentroidModel(
        mu_real=real.mean(axis=0),
        mu_fake=fake.mean(axis=0),
        k=k,
        token_indices=token_indices or [],
    )


def centroid_predict(model: CentroidModel, z: np.ndarray) -> Prediction:
    """Cosine-similarity margin to the two centroids."""
    z = np.asarray(z, dtype=np.float64)
    zn = np.linalg.norm(z)
    if zn == 0:
        raise ClassifierError("zero-norm embedding: cosine undefined")

    def _cos(mu: np.ndarray) -> float:
        n = np.linalg.norm(mu)
        return 0.0 if n == 0 else float(np.dot(z, mu) / (zn * n))

    return Prediction.from_score(_cos(model.mu_fake) - _cos(model.mu_real))


def centroid_scores(model: CentroidModel, embeddings: np.ndarray) -> np.ndarray:
    """Vectorized centroid_predict scores over stacked embeddings."""
    z = np.asarray(embeddings, dtype=np.float64)
    zn = np.linalg.norm(z, axis=1)
    if np.any(zn == 0):
        raise ClassifierError("zero-norm embedding: cosine undefined")

    def _cos(mu: np.ndarray) -> np.ndarray:
        n = np.linalg.norm(mu)
        if n == 0:
            return np.zeros(z.shape[0])
        return z @ mu / (zn * n)

    return _cos(model.mu_fake) - _cos(model.mu_real)


def _softmax_xent_grad(w, b, x, y):
    """Mean cross-entropy loss and gradients for a 2-logit linear head."""
    logits = x @ w.T + b  # (n, 2)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    n = x.shape[0]
    loss = -np.mean(shifted[np.arange(n), y] - np.log(expv.sum(axis=1)))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, delta.T @ x, delta.sum(axis=0)


def fit_probe(
    embeddings: np.ndarray,
    labels: list[str],
    meta: TrainingMeta | None = None,
    normalize_input: bool = True,
) -> LinearProbe:
    """Train the two-logit linear probe with Adam on cross-entropy.

    Deterministic: zero-initialized parameters, fixed shuffle seed,
    single-threaded accumulation. Full-batch behaviour is obtained by setting
    batch_size >= n; per-epoch mean losses are recorded in loss_history.
    """
    meta = meta or TrainingMeta()
    labels_arr = np.asarray(labels)
    y = np.where(labels_arr == LABEL_FAKE, 1, 0)
    if len(set(labels_arr.tolist())) < 2:
        raise ClassifierError("degenerate single-class training set")
    x = np.asarray(embeddings, dtype=np.float64)
    if normalize_input:
        x = _l2_normalize(x)
    n, d = x.shape
    w = np.zeros((2, d))
    b = np.zeros(2)
    m_w = np.zeros_like(w); v_w = np.zeros_like(w)
    m_b = np.zeros_like(b); v_b = np.zeros_like(b)
    rng = np.random.default_rng(meta.seed)
    step = 0
    history: list[float] = []
    for _ in range(meta.epochs):
        order = rng.permutation(n) if meta.batch_size < n else np.arange(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, meta.batch_size):
            idx = order[start : start + meta.batch_size]
            loss, g_w, g_b = _softmax_xent_grad(w, b, x[idx], y[idx])
            epoch_loss += loss
            n_batches += 1
            step += 1
            m_w = meta.beta1 * m_w + (1 - meta.beta1) * g_w
            v_w = meta.beta2 * v_w + (1 - meta.beta2) * g_w**2
            m_b = meta.beta1 * m_b + (1 - meta.beta1) * g_b
            v_b = meta.beta2 * v_b + (1 - meta.beta2) * g_b**2
            mhat_w = m_w / (1 - meta.beta1**step)
            vhat_w = v_w / (1 - meta.beta2**step)
            mhat_b = m_b / (1 - meta.beta1**step)
            vhat_b = v_b / (1 - meta.beta2**step)
            w -= meta.lr * mhat_w / (np.sqrt(vhat_w) + meta.adam_eps)
            b -= meta.lr * mhat_b / (np.sqrt(vhat_b) + meta.adam_eps)
        history.append(epoch_loss / n_batches)
    return LinearProbe(
        weights=w,
        bias=b,
        normalize_input=normalize_input,
        training_meta=meta,
        loss_history=history,
    )


def probe_predict(probe: LinearProbe, z: np.ndarray) -> Prediction:
    """Logit margin fake - real, honoring the probe's normalization flag."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (probe.dim,):
        raise ClassifierError(f"dimension mismatch: got {z.shape}, probe dim {probe.dim}")
    if probe.normalize_input:
        z = _l2_normalize(z)
    logits = probe.weights @ z + probe.bias
    return Prediction.from_score(logits[1] - logits[0])


def probe_scores(probe: LinearProbe, embeddings: np.ndarray) -> np.ndarray:
    """Vectorized probe_predict scores over stacked embeddings."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.shape[1] != probe.dim:
        raise ClassifierError(f"dimension mismatch: got {x.shape[1]}, probe dim {probe.dim}")
    if probe.normalize_input:
        x = _l2_normalize(x)
    logits = x @ probe.weights.T + probe.bias
    return logits[:, 1] - logits[:, 0]
