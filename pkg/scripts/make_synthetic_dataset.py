#!/usr/bin/env python3
"""Generate a planted-signal synthetic dataset on disk.

Writes feature files plus a JSONL manifest (reference + eval splits) that the
`fgts` CLI and the experiment harness consume directly. The planted token
indices are printed so ranking recovery can be checked by eye.
"""

import argparse
import json

from fgts.synthetic import make_planted_dataset, write_planted_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--n-ref", type=int, default=1000, help="reference samples per class")
    parser.add_argument("--n-eval", type=int, default=1000, help="eval samples per class")
    parser.add_argument("--dim", type=int, default=16, help="feature dimension")
    parser.add_argument("--informative", type=int, default=10, help="planted patch tokens")
    parser.add_argument("--gap", type=float, default=3.0, help="class-mean gap in noise sigmas")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    ds = make_planted_dataset(
        n_ref_per_class=args.n_ref,
        n_eval_per_class=args.n_eval,
        dim=args.dim,
        n_informative=args.informative,
        gap_sigma=args.gap,
        seed=args.seed,
    )
    manifest = write_planted_dataset(ds, args.out)
    print(json.dumps({"manifest": str(manifest), "planted_indices": ds.planted_indices}, indent=2))


if __name__ == "__main__":
    main()
