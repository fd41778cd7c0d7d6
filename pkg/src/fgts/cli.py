"""Command-line interface.

Verbs: validate, rank, fit, classify, eval, perturb, spectrum, sweep-tokens,
sweep-topk, sweep-robustness, report. Experiment verbs read a JSON config
mirroring ExperimentConfig; every config field is overridable by a flag.

Exit codes: 0 success, 2 validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import perturb
from .classifiers import CentroidModel, ClassifierError, LinearProbe, TrainingMeta, centroid_scores, probe_scores
from .feature_store import (
    FeatureStoreError,
    load_features,
    load_manifest,
    strategy_indices,
    validate_store,
)
from .fisher import FisherError, SelectionConfig, TokenRanking, compute_class_stats, embed_many, fisher_scores, select_top_k
from .harness import (
    ExperimentConfig,
    HarnessError,
    ROBUSTNESS_ROW_ORDER,
    robustness_sweep,
    run_experiment,
    token_strategy_sweep,
    topk_sweep,
)
from .metrics import MetricError, ScoredSample, group_by_generator

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3


def _load_config(args) -> ExperimentConfig:
    base: dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    if "training" in base and isinstance(base["training"], dict):
        base["training"] = TrainingMeta(**base["training"])
    overrides = {
        "reference_manifest": args.reference_manifest,
        "eval_manifest": args.eval_manifest,
        "features_dir": args.features,
        "token_strategy": args.strategy,
        "k": args.k,
        "selection": args.selection,
        "selection_seed": args.selection_seed,
        "protocol": args.protocol,
        "output_dir": args.out,
        "cache_dir": args.cache,
        "seed": args.seed,
    }
    for key, val in overrides.items():
        if val is not None:
            base[key] = val
    base.setdefault("seed", args.seed if args.seed is not None else 0)
    return ExperimentConfig(**base)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file mirroring ExperimentConfig")
    p.add_argument("--reference-manifest")
    p.add_argument("--eval-manifest")
    p.add_argument("--features", help="base dir for relative feature paths")
    p.add_argument("--strategy", help="token strategy: fgts|all|cls|reg|patch|cls+reg|cls+patch")
    p.add_argument("--k", type=int)
    p.add_argument("--selection", choices=["fisher_topk", "random_k"])
    p.add_argument("--selection-seed", type=int)
    p.add_argument("--protocol", choices=["centroid", "probe"])
    p.add_argument("--out")
    p.add_argument("--cache")
    p.add_argument("--seed", type=int, default=None, help="global seed (default 0)")


def cmd_validate(args) -> int:
    problems = validate_store(args.manifest, args.features)
    if problems:
        for p in problems:
            print(f"INVALID {p}", file=sys.stderr)
        return EXIT_VALIDATION
    print("OK")
    return EXIT_OK


def cmd_rank(args) -> int:
    manifest = load_manifest(args.manifest)
    features = load_features(manifest, args.features or Path(args.manifest).parent)
    refs = manifest.subset("reference") or manifest.records
    tensors = [features[r.sample_id] for r in refs]
    labels = [r.label for r in refs]
    stats = compute_class_stats(tensors, labels, scope=args.scope)
    scope_name = "patch_only" if args.scope == "patch" else "all_tokens"
    ranking = fisher_scores(stats, eps=args.eps, scope_name=scope_name)
    ranking.save(args.out, k_default=args.k)
    print(f"wrote {args.out} ({len(ranking.sorted_indices)} tokens ranked)")
    return EXIT_OK


def cmd_fit(args) -> int:
    manifest = load_manifest(args.manifest)
    features = load_features(manifest, args.features or Path(args.manifest).parent)
    refs = manifest.subset("reference") or manifest.records
    tensors = [features[r.sample_id] for r in refs]
    labels = [r.label for r in refs]
    if args.ranking:
        ranking = TokenRanking.load(args.ranking)
        cfg = SelectionConfig(k=args.k, strategy=args.selection, seed=args.selection_seed)
        indices = select_top_k(ranking, cfg)
    else:
        indices = strategy_indices(manifest.layout, args.strategy or "patch")
    emb = embed_many(tensors, indices)
    if args.protocol == "centroid":
        from .classifiers import fit_centroids

        model = fit_centroids(emb, labels, k=len(indices), token_indices=indices)
    else:
        from .classifiers import fit_probe

        meta = TrainingMeta(
            epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.train_seed
        )
        model = fit_probe(emb, labels, meta=meta, normalize_input=not args.no_normalize)
        model.token_indices = indices
    model.save(args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _load_model(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("protocol") == "probe":
        return LinearProbe.load(path)
    return CentroidModel.load(path)


def cmd_classify(args) -> int:
    model = _load_model(args.model)
    manifest = load_manifest(args.manifest)
    features = load_features(manifest, args.features or Path(args.manifest).parent)
    records = manifest.subset("eval") or manifest.records
    indices = model.token_indices
    if not indices:
        raise FisherError("model carries no token indices; refit with a ranking")
    tensors = [features[r.sample_id] for r in records]
    emb = embed_many(tensors, indices)
    scores = centroid_scores(model, emb) if isinstance(model, CentroidModel) else probe_scores(model, emb)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("sample_id,label,generator,score\n")
        for rec, s in zip(records, scores):
            fh.write(f"{rec.sample_id},{rec.label},{rec.generator},{s:.12g}\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    samples = []
    with open(args.scores, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("sample_id"):
            raise MetricError("scores file missing header")
        for line in fh:
            if not line.strip():
                continue
            sid, label, gen, score = line.strip().split(",")
            samples.append(ScoredSample(score=float(score), label=label, generator=gen))
    grouped = group_by_generator(samples)
    gens = [g for g in grouped if g != "__mean__"]
    csv_lines = ["generator,n_fake,n_real,acc,auc,ap"]
    md = ["| Generator | Acc | AUC | AP |", "|---|---|---|---|"]
    for g in gens + ["__mean__"]:
        t = grouped[g]
        name = "mean" if g == "__mean__" else g
        csv_lines.append(f"{name},{t.n_fake},{t.n_real},{t.acc:.10f},{t.auc:.10f},{t.ap:.10f}")
        md.append(f"| {name} | {t.acc:.4f} | {t.auc:.4f} | {t.ap:.4f} |")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    (out / "report.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    print((out / "report.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_perturb(args) -> int:
    spec = {"kind": args.kind}
    for pair in args.param or []:
        key, val = pair.split("=", 1)
        try:
            spec[key] = json.loads(val)
        except json.JSONDecodeError:
            spec[key] = val
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exts = {".png", ".jpg", ".jpeg"}
    count = 0
    for ipath in sorted(in_dir.iterdir()):
        if ipath.suffix.lower() not in exts:
            continue
        img = perturb.load_image(ipath)
        seed = perturb.derive_seed(args.seed, ipath.stem)
        out_img = perturb.apply_spec(img, spec, seed=seed)
        if args.kind == "jpeg":
            opath = out_dir / (ipath.stem + ".jpg")
        else:
            opath = out_dir / (ipath.stem + ".png")
        perturb.save_image(out_img, opath)
        count += 1
    print(f"perturbed {count} images -> {out_dir}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    grid = perturb.spectrum(perturb.load_image(args.in_path))
    out = Path(args.out)
    if out.suffix.lower() == ".png":
        perturb.spectrum_to_png(grid, out)
    else:
        perturb.spectrum_to_csv(grid, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg)
    print(report.to_markdown())
    return EXIT_OK


def cmd_sweep_tokens(args) -> int:
    cfg = _load_config(args)
    token_strategy_sweep(cfg)
    print((Path(cfg.output_dir) / "token_sweep.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_sweep_topk(args) -> int:
    cfg = _load_config(args)
    ks = [int(v) for v in args.ks.split(",")]
    topk_sweep(cfg, ks, n_random_seeds=args.random_seeds)
    print((Path(cfg.output_dir) / "topk_sweep.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_sweep_robustness(args) -> int:
    cfg = _load_config(args)
    perturbed = {}
    for pair in args.perturbed or []:
        name, path = pair.split("=", 1)
        perturbed[name] = path
    specs = list(ROBUSTNESS_ROW_ORDER) if args.full_row_set else [{"kind": "identity"}]
    if args.spec:
        specs = [{"kind": "identity"}] + [json.loads(s) for s in args.spec]
    robustness_sweep(cfg, specs, extractor=None, perturbed_manifests=perturbed)
    print((Path(cfg.output_dir) / "robustness.md").read_text(encoding="utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgts", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate feature files against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("rank", help="compute the Fisher token ranking")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.add_argument("--scope", default="patch", choices=["patch", "all"])
    p.add_argument("--eps", type=float, default=1e-12)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("fit", help="fit a centroid model or linear probe")
    p.add_argument("--protocol", required=True, choices=["centroid", "probe"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--features")
    p.add_argument("--ranking")
    p.add_argument("--strategy", help="token strategy when no ranking is given")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--selection", default="fisher_topk", choices=["fisher_topk", "random_k"])
    p.add_argument("--selection-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("classify", help="score eval samples with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="per-generator metrics from a scores CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb", help="apply a perturbation to a directory of images")
    p.add_argument("--kind", required=True)
    p.add_argument("--param", action="append", help="key=value, repeatable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("spectrum", help="export the log-magnitude spectrum of an image")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True, help=".csv or .png")
    p.set_defaults(func=cmd_spectrum)

    for name, fn in [
        ("report", cmd_report),
        ("sweep-tokens", cmd_sweep_tokens),
    ]:
        p = sub.add_parser(name)
        _add_experiment_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("sweep-topk")
    _add_experiment_flags(p)
    p.add_argument("--ks", default="10,20,30,50")
    p.add_argument("--random-seeds", type=int, default=5)
    p.set_defaults(func=cmd_sweep_topk)

    p = sub.add_parser("sweep-robustness")
    _add_experiment_flags(p)
    p.add_argument("--perturbed", action="append", help="name=manifest.jsonl, repeatable")
    p.add_argument("--spec", action="append", help="JSON perturbation spec, repeatable")
    p.add_argument("--full-row-set", action="store_true", help="use the standard robustness rows")
    p.set_defaults(func=cmd_sweep_robustness)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FeatureStoreError, FisherError, ClassifierError, MetricError, perturb.PerturbError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
