#!/usr/bin/env python3
"""Paired accelerated vs plain runs on ill-conditioned families.

Regression uses d = 8 instances with kappa = 1e5 and target 1e-4; the
eigensolver uses d = 16 instances with gap 0.05, kappa about 3e4 and
target 1e-3.  Reports median coordinate touches per arm.
"""

import argparse
import json
import sys

from nsls.bench import accel_verdict, eigen_accel_arm, paired, regression_accel_arm


def show(name, rows, verdict):
    for r in rows:
        key = "ata_ratio" if "ata_ratio" in r else "quality"
        print(f"{name:<10} seed={r['seed']:<3} accel={str(r['accel']):<5} "
              f"converged={str(r['converged']):<5} {key}={r[key]:.3e} "
              f"touches={r['coordinate_touches']:.4e}")
    print(f"# {name}: median plain {verdict['median_plain']:.4e}, median accelerated "
          f"{verdict['median_accel']:.4e}, speedup {verdict['speedup']:.2f}x, "
          f"all accurate: {verdict['all_accurate']}")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--which", choices=("regression", "eigen", "both"), default="both")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--json", help="also write the full rows here")
    args = p.parse_args(argv)

    seeds = range(args.seeds)
    out, ok = {}, True
    if args.which in ("regression", "both"):
        rows = paired(regression_accel_arm, seeds, args.workers)
        v = accel_verdict(rows, "ata_ratio", lambda r: r <= 1e-4)
        show("regression", rows, v)
        out["regression"] = {"rows": rows, "verdict": v}
        ok &= v["fewer_touches"] and v["all_accurate"]
    if args.which in ("eigen", "both"):
        rows = paired(eigen_accel_arm, seeds, args.workers)
        v = accel_verdict(rows, "quality", lambda q: q >= 1 - 1e-3)
        show("eigen", rows, v)
        out["eigen"] = {"rows": rows, "verdict": v}
        ok &= v["fewer_touches"] and v["all_accurate"]
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
