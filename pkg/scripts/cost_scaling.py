#!/usr/bin/env python3
"""Coordinate touches versus numerical sparsity on flat-spectrum families.

Prints one CSV row per target s and a verdict line: per-step touches divided
by mean sqrt(s) should stay within a factor 2, and total touches should not
decrease as s grows.
"""

import argparse
import csv
import json
import sys

from nsls.bench import SCALING_TARGETS, scaling_sweep, scaling_verdict

COLUMNS = ["target_s", "mean_s", "converged", "epochs", "inner_steps", "touches_per_step",
           "expected_touches_per_step", "per_step_over_sqrt_s", "coordinate_touches", "ata_ratio"]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--n", type=int, default=768)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--targets", type=float, nargs="+", default=list(SCALING_TARGETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--json", help="also write the full rows here")
    args = p.parse_args(argv)

    rows = scaling_sweep(args.targets, workers=args.workers, d=args.d, n=args.n,
                         eps=args.epsilon, seed=args.seed)
    w = csv.DictWriter(sys.stdout, COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    verdict = scaling_verdict(rows)
    print(f"# per-step spread {verdict['per_step_spread']:.3f} (limit 2), "
          f"monotone totals: {verdict['monotone']}, all converged: {verdict['all_converged']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"rows": rows, "verdict": verdict}, fh, indent=2)
    return 0 if verdict["within_factor_2"] and verdict["monotone"] and verdict["all_converged"] else 1


if __name__ == "__main__":
    sys.exit(main())
