"""Synthetic planted-signal benchmarks.

Generates token features where a known subset of patch tokens carries a
class-mean gap (in units of the per-dim noise sigma) while every other token
is pure noise. Used by the test suite and the runnable experiment scripts to
exercise ranking recovery, centroid/probe accuracy and the harness end to end
without any backbone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_store import (
    FeatureTensor,
    SampleManifest,
    SampleRecord,
    TokenLayout,
    save_manifest,
    write_feature_file,
)


@dataclass
class PlantedDataset:
    ref_tensors: list[FeatureTensor]
    ref_labels: list[str]
    eval_tensors: list[FeatureTensor]
    eval_labels: list[str]
    eval_generators: list[str]
    planted_indices: list[int]  # global token indices carrying the signal
    layout: TokenLayout
    dim: int


def make_planted_dataset(
    n_ref_per_class: int = 1000,
    n_eval_per_class: int = 1000,
    layout: TokenLayout | None = None,
    dim: int = 16,
    n_informative: int = 10,
    gap_sigma: float = 3.0,
    prototype_sigma: float = 3.0,
    seed: int = 0,
    eval_generators: tuple[str, ...] = ("gen_a", "gen_b"),
) -> PlantedDataset:
    """Gaussian tokens (sigma=1) around a shared per-token prototype; fake
    samples are shifted by gap_sigma along a fixed random sign pattern on
    every dimension of n_informative randomly chosen patch tokens. The
    prototype keeps class centroids away from the origin (where cosine
    similarity is undefined) and the sign pattern keeps the fake shift from
    being collinear with the prototype direction."""
    layout = layout or TokenLayout()
    rng = np.random.default_rng(seed)
    patch_idx = np.asarray(layout.patch_indices())
    planted = np.sort(rng.choice(patch_idx, size=n_informative, replace=False))
    prototype = rng.normal(0.0, prototype_sigma, size=(layout.n_tokens, dim))
    shift = gap_sigma * rng.choice([-1.0, 1.0], size=dim)

    def _draw(n: int, fake: bool) -> list[FeatureTensor]:
        data = prototype + rng.normal(0.0, 1.0, size=(n, layout.n_tokens, dim))
        if fake:
            data[:, planted, :] += shift
        return [FeatureTensor(layout=layout, data=d.astype(np.float32)) for d in data]

    ref_tensors = _draw(n_ref_per_class, fake=False) + _draw(n_ref_per_class, fake=True)
    ref_labels = ["real"] * n_ref_per_class + ["fake"] * n_ref_per_class
    eval_tensors = _draw(n_eval_per_class, fake=False) + _draw(n_eval_per_class, fake=True)
    eval_labels = ["real"] * n_eval_per_class + ["fake"] * n_eval_per_class
    gens = []
    for i, lab in enumerate(eval_labels):
        if lab == "real":
            gens.append("-")
        else:
            gens.append(eval_generators[i % len(eval_generators)])
    return PlantedDataset(
        ref_tensors=ref_tensors,
        ref_labels=ref_labels,
        eval_tensors=eval_tensors,
        eval_labels=eval_labels,
        eval_generators=gens,
        planted_indices=[int(i) for i in planted],
        layout=layout,
        dim=dim,
    )


def write_planted_dataset(ds: PlantedDataset, out_dir: str | Path) -> Path:
    """Materialize a PlantedDataset as feature files plus one JSONL manifest
    (reference + eval splits). Returns the manifest path."""
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    records: list[SampleRecord] = []

    def _emit(tensors, labels, generators, split, prefix):
        for i, (t, lab) in enumerate(zip(tensors, labels)):
            sid = f"{prefix}{i:05d}"
            fpath = feat_dir / f"{sid}.fgts"
            write_feature_file(t, fpath)
            gen = generators[i] if generators else ("-" if lab == "real" else "gen_ref")
            records.append(
                SampleRecord(
                    sample_id=sid,
                    feature_path=f"features/{sid}.fgts",
                    label=lab,
                    generator=gen,
                    split=split,
                )
            )

    ref_gens = ["-" if lab == "real" else "gen_ref" for lab in ds.ref_labels]
    _emit(ds.ref_tensors, ds.ref_labels, ref_gens, "reference", "ref")
    _emit(ds.eval_tensors, ds.eval_labels, ds.eval_generators, "eval", "ev")
    manifest = SampleManifest(
        records=records,
        layout=ds.layout,
        dim=ds.dim,
        seen_generators={"gen_ref", "gen_a"},
        unseen_generators={"gen_b"},
    )
    path = out / "manifest.jsonl"
    save_manifest(manifest, path)
    return path
