"""End-to-end experiment driver.

Wires manifests -> features -> token ranking -> protocol fitting ->
per-generator evaluation -> CSV/Markdown reports, with content-addressed
caching of the ranking and model stages and byte-reproducible outputs.
Also hosts the ablation sweeps (token strategies, top-K vs random-K,
robustness over perturbation specs).
"""

from __future__ import annotations

import hashlib
import json
import tempfile
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import perturb
from .classifiers import (
    CentroidModel,
    LinearProbe,
    TrainingMeta,
    centroid_scores,
    fit_centroids,
    fit_probe,
    probe_scores,
)
from .feature_store import (
    FeatureTensor,
    SampleManifest,
    SampleRecord,
    load_features,
    load_manifest,
    save_manifest,
    strategy_indices,
    write_feature_file,
    TOKEN_STRATEGIES,
)
from .fisher import (
    SelectionConfig,
    TokenRanking,
    compute_class_stats,
    embed_many,
    fisher_scores,
    select_top_k,
)
from .metrics import MetricTriple, ScoredSample, group_by_generator


class HarnessError(RuntimeError):
    """Stage-tagged pipeline failure."""


@dataclass
class ExperimentConfig:
    reference_manifest: str
    eval_manifest: str
    features_dir: str | None = None  # base for relative feature paths
    token_strategy: str = "fgts"  # "fgts" or a named token subset
    k: int = 10
    selection: str = "fisher_topk"  # or "random_k"
    selection_seed: int = 0
    ranking_scope: str = "patch"  # token scope used for Fisher scoring
    fisher_eps: float = 1e-12
    protocol: str = "centroid"  # or "probe"
    training: TrainingMeta = field(default_factory=TrainingMeta)
    normalize_probe_input: bool = True
    output_dir: str = "runs/out"
    cache_dir: str | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class EvalReport:
    rows: list[dict]  # per-generator: {generator, n_fake, n_real, acc, auc, ap}
    aggregate: dict
    config_fingerprint: str
    token_indices: list[int]
    protocol: str

    def __post_init__(self):
        if self.rows:
            mean_acc = float(np.mean([r["acc"] for r in self.rows]))
            if abs(mean_acc - self.aggregate["acc"]) > 1e-12:
                raise HarnessError("aggregate accuracy is not the unweighted generator mean")

    def to_csv(self) -> str:
        lines = ["generator,n_fake,n_real,acc,auc,ap"]
        for r in self.rows + [self.aggregate]:
            lines.append(
                f"{r['generator']},{r['n_fake']},{r['n_real']},"
                f"{r['acc']:.10f},{r['auc']:.10f},{r['ap']:.10f}"
            )
        lines.append(f"# fingerprint={self.config_fingerprint}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "| Generator | n_fake | n_real | Acc | AUC | AP |",
            "|---|---|---|---|---|---|",
        ]
        for r in self.rows + [self.aggregate]:
            lines.append(
                f"| {r['generator']} | {r['n_fake']} | {r['n_real']} | "
                f"{r['acc']:.4f} | {r['auc']:.4f} | {r['ap']:.4f} |"
            )
        lines.append("")
        lines.append("Positive class: fake; real pool shared across generator columns.")
        lines.append(f"Fingerprint: `{self.config_fingerprint}`")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "rows": self.rows,
            "aggregate": self.aggregate,
            "fingerprint": self.config_fingerprint,
            "token_indices": self.token_indices,
            "protocol": self.protocol,
        }


# ---------------------------------------------------------------------------
# content-addressed cache


def _sha256_bytes(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()


def _hash_reference_inputs(manifest_path: Path, manifest: SampleManifest, base: Path) -> str:
    h = hashlib.sha256()
    h.update(manifest_path.read_bytes())
    for rec in manifest.subset("reference"):
        fpath = Path(rec.feature_path)
        if not fpath.is_absolute():
            fpath = base / fpath
        h.update(rec.sample_id.encode())
        h.update(fpath.read_bytes())
    return h.hexdigest()


class StageCache:
    """One JSON artifact per content key; one writer per key."""

    def __init__(self, cache_dir: str | Path | None):
        self.dir = Path(cache_dir) if cache_dir else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)
        self.hits: dict[str, bool] = {}

    def key(self, stage: str, inputs: dict) -> str:
        return _sha256_bytes(stage.encode(), json.dumps(inputs, sort_keys=True).encode())

    def get_or_compute(self, stage: str, inputs: dict, compute: Callable[[], dict]) -> dict:
        key = self.key(stage, inputs)
        if self.dir:
            path = self.dir / f"{key}.json"
            if path.exists():
                self.hits[stage] = True
                with open(path, "r", encoding="utf-8") as fh:
                    return json.load(fh)
        result = compute()
        self.hits[stage] = False
        if self.dir:
            tmp = self.dir / f"{key}.json.tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(result, fh, sort_keys=True)
            tmp.replace(self.dir / f"{key}.json")
        return result


# ---------------------------------------------------------------------------
# pipeline stages


def _load_split(manifest_path: str, split: str, features_dir: str | None):
    path = Path(manifest_path)
    manifest = load_manifest(path)
    base = Path(features_dir) if features_dir else path.parent
    records = manifest.subset(split)
    features = load_features(
        SampleManifest(
            records=records,
            layout=manifest.layout,
            dim=manifest.dim,
            seen_generators=manifest.seen_generators,
            unseen_generators=manifest.unseen_generators,
        ),
        base,
    )
    return manifest, records, features


def _ranking_stage(cfg: ExperimentConfig, cache: StageCache, ref_records, ref_features, ref_hash: str) -> TokenRanking:
    def compute() -> dict:
        tensors = [ref_features[r.sample_id] for r in ref_records]
        labels = [r.label for r in ref_records]
        stats = compute_class_stats(tensors, labels, scope=cfg.ranking_scope)
        scope_name = "patch_only" if cfg.ranking_scope == "patch" else "all_tokens"
        ranking = fisher_scores(stats, eps=cfg.fisher_eps, scope_name=scope_name)
        return ranking.to_json_dict(k_default=cfg.k)

    inputs = {"ref": ref_hash, "scope": cfg.ranking_scope, "eps": cfg.fisher_eps}
    obj = cache.get_or_compute("ranking", inputs, compute)
    return TokenRanking(
        scores=np.asarray(obj["scores"], dtype=np.float64),
        token_indices=[int(i) for i in obj["token_indices"]],
        sorted_indices=[int(i) for i in obj["sorted_indices"]],
        layout=ref_features[ref_records[0].sample_id].layout,
        ranking_scope=str(obj["scope"]),
    )


def _token_indices(cfg: ExperimentConfig, ranking: TokenRanking | None, layout) -> list[int]:
    if cfg.token_strategy == "fgts":
        assert ranking is not None
        sel = SelectionConfig(k=cfg.k, strategy=cfg.selection, seed=cfg.selection_seed)
        return select_top_k(ranking, sel)
    return strategy_indices(layout, cfg.token_strategy)


def _fit_stage(cfg: ExperimentConfig, cache: StageCache, indices: list[int], ref_records, ref_features, ref_hash: str):
    tensors = [ref_features[r.sample_id] for r in ref_records]
    labels = [r.label for r in ref_records]

    def compute() -> dict:
        emb = embed_many(tensors, indices)
        if cfg.protocol == "centroid":
            model = fit_centroids(emb, labels, k=len(indices), token_indices=indices)
            return {
                "protocol": "centroid",
                "mu_real": [float(v) for v in model.mu_real],
                "mu_fake": [float(v) for v in model.mu_fake],
                "k": model.k,
                "token_indices": indices,
            }
        if cfg.protocol == "probe":
            probe = fit_probe(emb, labels, meta=cfg.training, normalize_input=cfg.normalize_probe_input)
            return {
                "protocol": "probe",
                "weights": [[float(v) for v in row] for row in probe.weights],
                "bias": [float(v) for v in probe.bias],
                "normalize_input": probe.normalize_input,
                "training_meta": cfg.training.to_dict(),
                "token_indices": indices,
            }
        raise HarnessError(f"fit: unknown protocol {cfg.protocol!r}")

    inputs = {
        "ref": ref_hash,
        "indices": indices,
        "protocol": cfg.protocol,
        "training": cfg.training.to_dict() if cfg.protocol == "probe" else None,
        "normalize": cfg.normalize_probe_input if cfg.protocol == "probe" else None,
    }
    obj = cache.get_or_compute("model", inputs, compute)
    if obj["protocol"] == "centroid":
        return CentroidModel(
            mu_real=np.asarray(obj["mu_real"]),
            mu_fake=np.asarray(obj["mu_fake"]),
            k=int(obj["k"]),
            token_indices=[int(i) for i in obj["token_indices"]],
        )
    return LinearProbe(
        weights=np.asarray(obj["weights"]),
        bias=np.asarray(obj["bias"]),
        normalize_input=bool(obj["normalize_input"]),
        training_meta=TrainingMeta(**obj["training_meta"]),
        token_indices=[int(i) for i in obj["token_indices"]],
    )


def run_experiment(cfg: ExperimentConfig) -> EvalReport:
    """Execute the full manifest -> report pipeline and persist all artifacts."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = StageCache(cfg.cache_dir)

    try:
        ref_manifest, ref_records, ref_features = _load_split(
            cfg.reference_manifest, "reference", cfg.features_dir
        )
    except Exception as exc:
        raise HarnessError(f"load-reference: {exc}") from exc
    try:
        _, eval_records, eval_features = _load_split(cfg.eval_manifest, "eval", cfg.features_dir)
    except Exception as exc:
        raise HarnessError(f"load-eval: {exc}") from exc
    if not eval_records:
        raise HarnessError("eval: no eval samples")
    if not ref_records:
        raise HarnessError("reference: no reference samples")

    ref_hash = _hash_reference_inputs(Path(cfg.reference_manifest), ref_manifest, Path(cfg.features_dir) if cfg.features_dir else Path(cfg.reference_manifest).parent)
    layout = ref_features[ref_records[0].sample_id].layout

    ranking = None
    if cfg.token_strategy == "fgts":
        try:
            ranking = _ranking_stage(cfg, cache, ref_records, ref_features, ref_hash)
        except Exception as exc:
            raise HarnessError(f"rank: {exc}") from exc
        ranking.save(out_dir / "ranking.json", k_default=cfg.k)

    try:
        indices = _token_indices(cfg, ranking, layout)
    except Exception as exc:
        raise HarnessError(f"select: {exc}") from exc

    try:
        model = _fit_stage(cfg, cache, indices, ref_records, ref_features, ref_hash)
    except Exception as exc:
        raise HarnessError(f"fit: {exc}") from exc

    model_path = out_dir / "model.json"
    model.save(model_path)

    try:
        eval_tensors = [eval_features[r.sample_id] for r in eval_records]
        emb = embed_many(eval_tensors, indices)
        if isinstance(model, CentroidModel):
            scores = centroid_scores(model, emb)
        else:
            scores = probe_scores(model, emb)
    except Exception as exc:
        raise HarnessError(f"classify: {exc}") from exc

    samples = [
        ScoredSample(score=float(s), label=r.label, generator=r.generator)
        for s, r in zip(scores, eval_records)
    ]
    with open(out_dir / "scores.csv", "w", encoding="utf-8") as fh:
        fh.write("sample_id,label,generator,score\n")
        for r, s in zip(eval_records, scores):
            fh.write(f"{r.sample_id},{r.label},{r.generator},{s:.12g}\n")

    try:
        grouped = group_by_generator(samples)
    except Exception as exc:
        raise HarnessError(f"metrics: {exc}") from exc

    def row_of(gen: str, t: MetricTriple) -> dict:
        return {
            "generator": gen,
            "n_fake": t.n_fake,
            "n_real": t.n_real,
            "acc": t.acc,
            "auc": t.auc,
            "ap": t.ap,
        }

    gen_order = [g for g in (r.generator for r in eval_records if r.label == "fake")]
    ordered = list(dict.fromkeys(gen_order))
    rows = [row_of(g, grouped[g]) for g in ordered]
    aggregate = row_of("mean", grouped["__mean__"])

    fingerprint = _sha256_bytes(
        cfg.canonical_json().encode(),
        ref_hash.encode(),
        json.dumps(indices).encode(),
        model_path.read_bytes(),
        json.dumps([[s.score, s.label, s.generator] for s in samples]).encode(),
    )
    report = EvalReport(
        rows=rows,
        aggregate=aggregate,
        config_fingerprint=fingerprint,
        token_indices=list(indices),
        protocol=cfg.protocol,
    )
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out_dir / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out_dir / "run_log.json", "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.to_dict(), "cache_hits": cache.hits}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return report


# ---------------------------------------------------------------------------
# sweeps


def token_strategy_sweep(cfg: ExperimentConfig) -> dict[str, EvalReport]:
    """Run the six named token strategies under one protocol."""
    reports: dict[str, EvalReport] = {}
    for strategy in TOKEN_STRATEGIES:
        sub = replace(cfg, token_strategy=strategy, output_dir=str(Path(cfg.output_dir) / f"strategy_{strategy.replace('+', '_')}"))
        reports[strategy] = run_experiment(sub)
    _write_sweep_table(
        Path(cfg.output_dir) / "token_sweep",
        [(name, reports[name].aggregate) for name in TOKEN_STRATEGIES],
        label="Token strategy",
    )
    return reports


def topk_sweep(cfg: ExperimentConfig, ks: list[int], n_random_seeds: int = 5) -> dict[int, dict]:
    """Paired fisher/random reports per K; random baseline averaged over seeds."""
    results: dict[int, dict] = {}
    table_rows = []
    for k in ks:
        fisher_cfg = replace(
            cfg, token_strategy="fgts", selection="fisher_topk", k=k,
            output_dir=str(Path(cfg.output_dir) / f"k{k}_fisher"),
        )
        fisher_report = run_experiment(fisher_cfg)
        random_reports = []
        for s in range(n_random_seeds):
            rnd_cfg = replace(
                cfg, token_strategy="fgts", selection="random_k", k=k, selection_seed=s,
                output_dir=str(Path(cfg.output_dir) / f"k{k}_random_seed{s}"),
            )
            random_reports.append(run_experiment(rnd_cfg))
        random_mean_acc = float(np.mean([r.aggregate["acc"] for r in random_reports]))
        results[k] = {
            "fisher": fisher_report,
            "random": random_reports,
            "random_mean_acc": random_mean_acc,
        }
        table_rows.append((k, fisher_report.aggregate["acc"], random_mean_acc))
    lines = ["k,fisher_acc,random_mean_acc"]
    md = ["| K | Fisher top-K acc | Random-K acc (mean) |", "|---|---|---|"]
    for k, fa, ra in table_rows:
        lines.append(f"{k},{fa:.10f},{ra:.10f}")
        md.append(f"| {k} | {fa:.4f} | {ra:.4f} |")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "topk_sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "topk_sweep.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    return results


ROBUSTNESS_ROW_ORDER = [
    {"kind": "identity"},
    {"kind": "gaussian", "sigma_255": 5},
    {"kind": "gaussian", "sigma_255": 10},
    {"kind": "jpeg", "quality": 70},
    {"kind": "jpeg", "quality": 80},
    {"kind": "resize", "factor": 0.5},
    {"kind": "resize", "factor": 0.75},
]


def spec_name(spec: dict) -> str:
    if spec["kind"] == "identity":
        return "clean"
    params = "_".join(f"{k}{v}" for k, v in sorted(spec.items()) if k != "kind")
    return f"{spec['kind']}_{params}" if params else spec["kind"]


def robustness_sweep(
    cfg: ExperimentConfig,
    specs: list[dict],
    extractor: Callable[[np.ndarray], FeatureTensor] | None = None,
    perturbed_manifests: dict[str, str] | None = None,
) -> dict[str, EvalReport]:
    """Clean baseline plus one report per perturbation spec.

    Perturbed features come either from pre-extracted manifests keyed by
    spec_name, or by perturbing eval images and re-extracting through
    `extractor` (a bridge-like callable mapping an image array to a tensor).
    """
    reports: dict[str, EvalReport] = {}
    for spec in specs:
        name = spec_name(spec)
        if spec["kind"] == "identity":
            # clean row: the original eval manifest, no re-extraction
            clean_cfg = replace(cfg, output_dir=str(Path(cfg.output_dir) / name))
            reports[name] = run_experiment(clean_cfg)
            continue
        if perturbed_manifests and name in perturbed_manifests:
            sub = replace(
                cfg,
                eval_manifest=perturbed_manifests[name],
                output_dir=str(Path(cfg.output_dir) / name),
            )
            reports[name] = run_experiment(sub)
            continue
        if extractor is None:
            raise HarnessError(f"robustness: no extractor and no precomputed features for {name!r}")
        manifest_path = _extract_perturbed_split(cfg, spec, extractor, Path(cfg.output_dir) / name)
        sub = replace(cfg, eval_manifest=str(manifest_path), output_dir=str(Path(cfg.output_dir) / name))
        reports[name] = run_experiment(sub)
    _write_sweep_table(
        Path(cfg.output_dir) / "robustness",
        [(n, r.aggregate) for n, r in reports.items()],
        label="Perturbation",
    )
    return reports


def _extract_perturbed_split(cfg: ExperimentConfig, spec: dict, extractor, work_dir: Path) -> Path:
    work_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(cfg.eval_manifest)
    records = manifest.subset("eval")
    if any(r.image_path is None for r in records):
        raise HarnessError("robustness: eval records lack image paths for re-extraction")
    base = Path(cfg.eval_manifest).parent
    new_records: list[SampleRecord] = []
    feat_dir = work_dir / "features"
    feat_dir.mkdir(exist_ok=True)
    out_layout = None
    out_dim = None
    for rec in records:
        ipath = Path(rec.image_path)
        if not ipath.is_absolute():
            ipath = base / ipath
        img = perturb.load_image(ipath)
        seed = perturb.derive_seed(cfg.seed, rec.sample_id)
        out_img = perturb.apply_spec(img, spec, seed=seed)
        # round-trip through 8-bit encoding, matching on-disk re-extraction
        with tempfile.NamedTemporaryFile(suffix=".png", delete=True) as tmp:
            perturb.save_image(out_img, tmp.name)
            reloaded = perturb.load_image(tmp.name)
        tensor = extractor(reloaded)
        out_layout = tensor.layout
        out_dim = tensor.dim
        fpath = feat_dir / f"{rec.sample_id}.fgts"
        write_feature_file(tensor, fpath)
        new_records.append(
            SampleRecord(
                sample_id=rec.sample_id,
                # absolute so the eval split resolves regardless of features_dir
                feature_path=str(fpath.resolve()),
                label=rec.label,
                generator=rec.generator,
                split="eval",
                image_path=rec.image_path,
            )
        )
    if out_layout is None:
        raise HarnessError("robustness: eval manifest produced no records")
    new_manifest = SampleManifest(
        records=new_records,
        layout=out_layout,
        dim=out_dim,
        seen_generators=manifest.seen_generators,
        unseen_generators=manifest.unseen_generators,
    )
    manifest_path = work_dir / "manifest.jsonl"
    save_manifest(new_manifest, manifest_path)
    return manifest_path


def _write_sweep_table(stem: Path, rows: list[tuple[str, dict]], label: str) -> None:
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_lines = [f"{label.lower().replace(' ', '_')},acc,auc,ap"]
    md = [f"| {label} | Acc | AUC | AP |", "|---|---|---|---|"]
    for name, agg in rows:
        csv_lines.append(f"{name},{agg['acc']:.10f},{agg['auc']:.10f},{agg['ap']:.10f}")
        md.append(f"| {name} | {agg['acc']:.4f} | {agg['auc']:.4f} | {agg['ap']:.4f} |")
    Path(str(stem) + ".csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    Path(str(stem) + ".md").write_text("\n".join(md) + "\n", encoding="utf-8")
