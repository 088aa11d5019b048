"""Benchmark families and paired sweeps shared by the scripts and the acceptance suite.

Every function returns plain dict rows so results can go straight to JSON or
CSV.  Accuracy is always checked against the dense oracle, so these run at
desk scale only.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, Optional, Sequence

import numpy as np

from .eigensolver import EigenAccelConfig, EigenConfig, top_eigenvector
from .generator import GenSpec, generate
from .oracle import DenseOracle
from .regression import (AccelConfig, RegressionConfig, RegressionProblem, _build_system,
                         solve)
from .sampling import build_samplers, expected_touches

SCALING_TARGETS = (1.0, 4.0, 16.0, 64.0, 256.0)


def flat_spectrum_spec(target_s: float, d: int = 256, n: int = 768, seed: int = 1) -> GenSpec:
    """Dense rows, every singular value 1 (so ``mu = lambda_1 = 1``)."""
    return GenSpec(n, d, target_s, spectrum=(1.0,) * min(n, d), seed=seed)


def ill_conditioned_spec(seed: int, n: int = 200, d: int = 8, kappa: float = 1e5,
                         target_s: float = 2.0) -> GenSpec:
    """``d - 1`` unit eigenvalues of ``A^T A`` and one small one giving ``||A||_F^2 / mu = kappa``."""
    ev = np.ones(d)
    ev[-1] = (d - 1) / (kappa - 1)
    return GenSpec(n, d, target_s, spectrum=tuple(np.sqrt(ev)), seed=seed)


def gapped_spec(seed: int, n: int = 80, d: int = 16, gap: float = 0.05,
                floor: float = 1e-4, target_s: float = 2.0) -> GenSpec:
    """``A^T A`` eigenvalues ``1, 1 - gap`` then a geometric tail from 0.5 down to ``floor``."""
    ev = np.concatenate([[1.0, 1.0 - gap], np.geomspace(0.5, floor, d - 2)])
    return GenSpec(n, d, target_s, spectrum=tuple(np.sqrt(ev)), seed=seed)


def ata_ratio(oracle: DenseOracle, x: np.ndarray, x_init: np.ndarray, xs: np.ndarray) -> float:
    A = oracle.dense
    den = float(np.linalg.norm(A @ (x_init - xs)))
    return float(np.linalg.norm(A @ (x - xs))) / den if den > 0 else 0.0


def run_regression(spec: GenSpec, eps: float, seed: int, accel: bool = False,
                   mat=None) -> dict:
    """One regression solve on a generated instance with ``mu`` from the dense oracle."""
    mat = generate(spec) if mat is None else mat
    oracle = DenseOracle(mat)
    mu = oracle.spectrum().lambda_min
    b = np.random.default_rng(spec.seed).standard_normal(mat.n_rows)
    prob = RegressionProblem(mat, b, mu=mu)
    cfg = RegressionConfig(epsilon=eps, seed=seed, accel=AccelConfig(enabled=accel))
    x, rep = solve(prob, cfg)
    plan = rep.config
    return {
        "n": mat.n_rows, "d": mat.n_cols, "target_s": spec.target_s, "seed": seed,
        "gen_seed": spec.seed, "accel": accel, "kappa": mat.frob_sq / mu,
        "mean_s": float(mat.num_sparsity.mean()),
        "mean_sqrt_s": float(np.sqrt(mat.num_sparsity).mean()),
        "converged": rep.converged, "epochs": rep.epochs, "inner_steps": rep.inner_steps,
        "step_touches": rep.touch_breakdown["inner_step_touches"],
        "coordinate_touches": rep.coordinate_touches,
        "ata_ratio": ata_ratio(oracle, x, prob.x_init, oracle.solve(b)),
        "m": plan.get("m"), "k": plan.get("k"), "wall_time_ms": rep.wall_time_ms,
    }


def scaling_row(target_s: float, d: int = 256, n: int = 768, eps: float = 1e-3,
                seed: int = 0, gen_seed: int = 1) -> dict:
    """Cost of one flat-spectrum solve plus the plan's expected per-step touches."""
    spec = flat_spectrum_spec(target_s, d, n, gen_seed)
    mat = generate(spec)
    row = run_regression(spec, eps, seed, mat=mat)
    row["touches_per_step"] = row["step_touches"] / max(row["inner_steps"], 1)
    # the same plan the solver built (mu = 1 for this family)
    sys = _build_system(mat, np.zeros(d), 1.0, mat.norm2_upper_bound(), None, [])
    row["expected_touches_per_step"] = expected_touches(sys.plan, build_samplers(mat, sys.plan))
    row["per_step_over_sqrt_s"] = row["touches_per_step"] / row["mean_sqrt_s"]
    return row


def scaling_sweep(targets: Sequence[float] = SCALING_TARGETS, workers: int = 1, **kw) -> list[dict]:
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_scaling_star, [(t, kw) for t in targets]))
    return [scaling_row(t, **kw) for t in targets]


def _scaling_star(args):
    t, kw = args
    return scaling_row(t, **kw)


def scaling_verdict(rows: Sequence[dict]) -> dict:
    """Spread of per-step touches over ``sqrt(s)`` and monotonicity of the totals."""
    per = [r["per_step_over_sqrt_s"] for r in rows]
    totals = [r["coordinate_touches"] for r in rows]
    spread = max(per) / min(per)
    monotone = all(b >= a for a, b in zip(totals, totals[1:]))
    return {"per_step_spread": spread, "within_factor_2": spread <= 2.0,
            "monotone": monotone, "all_converged": all(r["converged"] for r in rows)}


def run_eigen(spec: GenSpec, eps: float, gap: float, seed: int, accel: bool = False,
              power_budget: Optional[int] = None) -> dict:
    mat = generate(spec)
    sp = DenseOracle(mat).spectrum()
    cfg = EigenConfig(epsilon=eps, gap_lower_bound=gap, seed=seed, power_budget=power_budget,
                      accel=EigenAccelConfig(enabled=accel))
    v, rep = top_eigenvector(mat, cfg)
    rq = float(v @ mat.gram_matvec(v))
    return {
        "n": mat.n_rows, "d": mat.n_cols, "gen_seed": spec.seed, "seed": seed, "accel": accel,
        "gap": sp.gap, "kappa": mat.frob_sq / sp.lambda_min if sp.lambda_min > 0 else math.inf,
        "converged": rep.converged, "quality": rq / sp.lambda1,
        "unit_norm": abs(float(np.linalg.norm(v)) - 1.0) <= 1e-12,
        "outer_iterations": rep.final_metrics.get("outer_iterations"),
        "coordinate_touches": rep.coordinate_touches, "wall_time_ms": rep.wall_time_ms,
    }


def paired(run_one, seeds: Iterable[int], workers: int = 1) -> list[dict]:
    """``run_one(seed, accel)`` for both arms on every seed."""
    jobs = [(run_one, s, acc) for s in seeds for acc in (False, True)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_call, jobs))
    return [_call(j) for j in jobs]


def _call(job):
    fn, seed, accel = job
    return fn(seed, accel)


def regression_accel_arm(seed: int, accel: bool, eps: float = 1e-4) -> dict:
    return run_regression(ill_conditioned_spec(seed), eps, seed, accel)


def eigen_accel_arm(seed: int, accel: bool, eps: float = 1e-3) -> dict:
    # power_budget=0: with the default budget the power phase alone certifies
    # this family and both arms would do identical work
    return run_eigen(gapped_spec(seed), eps, 0.05, seed, accel, power_budget=0)


def accel_verdict(rows: Sequence[dict], ok_key: str, ok_fn) -> dict:
    plain = [r for r in rows if not r["accel"]]
    fast = [r for r in rows if r["accel"]]
    mp = float(np.median([r["coordinate_touches"] for r in plain]))
    mf = float(np.median([r["coordinate_touches"] for r in fast]))
    return {"median_plain": mp, "median_accel": mf, "speedup": mp / mf,
            "fewer_touches": mf < mp,
            "all_accurate": all(r["converged"] and ok_fn(r[ok_key]) for r in rows)}
