#!/usr/bin/env python3
"""Run the standard ablations (token strategies, top-K vs random-K) against a
feature manifest and print the result tables.

With --synthetic, a planted-signal dataset is generated first so the script
is runnable end to end without any extracted features.
"""

import argparse
import tempfile
from pathlib import Path

from fgts.harness import ExperimentConfig, token_strategy_sweep, topk_sweep
from fgts.synthetic import make_planted_dataset, write_planted_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--manifest", help="feature manifest (reference + eval splits)")
    parser.add_argument("--synthetic", action="store_true", help="generate a planted dataset first")
    parser.add_argument("--out", required=True, help="output directory for run artifacts")
    parser.add_argument("--protocol", default="centroid", choices=["centroid", "probe"])
    parser.add_argument("--ks", default="10,20,30,50", help="comma-separated K values")
    parser.add_argument("--random-seeds", type=int, default=5)
    parser.add_argument("--cache", help="stage cache directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.synthetic:
        ds_dir = Path(args.out) / "synthetic_data"
        ds = make_planted_dataset(n_ref_per_class=500, n_eval_per_class=500, dim=8, seed=args.seed)
        manifest = str(write_planted_dataset(ds, ds_dir))
        print(f"planted tokens: {ds.planted_indices}")
    elif args.manifest:
        manifest = args.manifest
    else:
        parser.error("either --manifest or --synthetic is required")

    cfg = ExperimentConfig(
        reference_manifest=manifest,
        eval_manifest=manifest,
        protocol=args.protocol,
        output_dir=str(Path(args.out) / "tokens"),
        cache_dir=args.cache,
        seed=args.seed,
    )
    token_strategy_sweep(cfg)
    print((Path(args.out) / "tokens" / "token_sweep.md").read_text())

    ks = [int(v) for v in args.ks.split(",")]
    topk_cfg = ExperimentConfig(
        reference_manifest=manifest,
        eval_manifest=manifest,
        protocol=args.protocol,
        output_dir=str(Path(args.out) / "topk"),
        cache_dir=args.cache,
        seed=args.seed,
    )
    topk_sweep(topk_cfg, ks, n_random_seeds=args.random_seeds)
    print((Path(args.out) / "topk" / "topk_sweep.md").read_text())


if __name__ == "__main__":
    main()
