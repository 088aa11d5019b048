"""Per-lemma checks of the sampling estimators on a given matrix.

Each estimator is checked on every row whose sample space is small enough to
enumerate (mean exact to 1e-10, second moment under its bound) and by Monte
Carlo on a few of the remaining rows.  ``inject_bias`` scales every estimate
by ``1 + inject_bias``; it exists so tests can confirm the checks fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .oracle import (ENUM_BUDGET, EstimatorSpec, OracleLimitError, enumerate_estimator,
                     monte_carlo_moments, samplemat_bound, sampledot_bound, samplerankone_bound,
                     samplevec_bound, space_size, tail_bound_holds)
from .rng import make_rng
from .sampling import (build_plan, build_samplers, samplemat, sampledotproduct,
                       samplerankonemat, samplevec)
from .sparse_matrix import DENSE_ORACLE_LIMIT, RowMatrix

MEAN_TOL = 1e-10


@dataclass
class LemmaResult:
    name: str
    passed: bool
    measured: float
    bound: float
    enumerated: int = 0
    monte_carlo: int = 0
    notes: list = field(default_factory=list)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag}  {self.name:<18} measured={self.measured:.6g} bound={self.bound:.6g} "
                f"enumerated={self.enumerated} monte_carlo={self.monte_carlo}")

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": self.measured,
                "bound": self.bound, "enumerated": self.enumerated,
                "monte_carlo": self.monte_carlo, "notes": list(self.notes)}


class _Tally:
    """Worst second-moment-to-bound ratio and pass flag across checks."""

    def __init__(self, name: str):
        self.res = LemmaResult(name, True, 0.0, 1.0)
        self.worst = -1.0

    def add(self, second: float, bound: float, ok: bool, enumerated: bool, note: str = ""):
        ratio = second / bound if bound > 0 else (0.0 if second <= 0 else math.inf)
        if ratio > self.worst:
            self.worst = ratio
            self.res.measured, self.res.bound = second, bound
        if enumerated:
            self.res.enumerated += 1
        else:
            self.res.monte_carlo += 1
        if not ok:
            self.res.passed = False
            if note:
                self.res.notes.append(note)


def _vec(idx, vals, d):
    out = np.zeros(d)
    np.add.at(out, idx, vals)
    return out


def _enum_check(spec: EstimatorSpec, target: np.ndarray, bound: float, bias: float):
    en = enumerate_estimator(spec)
    mean = en.mean * (1.0 + bias)
    second = en.second_moment * (1.0 + bias) ** 2
    scale = max(float(np.linalg.norm(target)), 1e-300)
    mean_ok = float(np.linalg.norm(mean - target)) <= MEAN_TOL * max(scale, 1.0)
    second_ok = second <= bound * (1.0 + 1e-10) + 1e-300
    return second, mean_ok and second_ok, mean_ok


def verify_matrix(mat: RowMatrix, k: float = 1.0, draws: int = 100_000, seed: int = 0,
                  mc_rows: int = 2, inject_bias: float = 0.0,
                  enum_budget: int = ENUM_BUDGET) -> list[LemmaResult]:
    """Run every estimator check on ``mat``; returns one result per lemma."""
    if mat.n_rows * mat.n_cols > DENSE_ORACLE_LIMIT:
        raise OracleLimitError("verify runs at desk scale only")
    if mat.frob_sq == 0:
        raise ValueError("verify needs a nonzero matrix")
    rng = make_rng(seed)
    d = mat.n_cols
    plan = build_plan(mat, k)
    samplers = build_samplers(mat, plan)
    x = rng.standard_normal(d)
    scale = 1.0 + inject_bias
    results = []

    # numerical sparsity tail bound, every row and every c
    tail = _Tally("numerical_sparsity")
    for r in mat.rows:
        for c in range(1, max(r.nnz, 1) + 1):
            if r.nnz == 0:
                continue
            mags = np.sort(np.abs(r.values))[::-1]
            t = float(np.sum(mags[c:] ** 2))
            tail.add(t, r.num_sparsity / c * r.l2sq, tail_bound_holds(r, c), True)
    results.append(tail.res)

    live = [i for i, r in enumerate(mat.rows) if r.nnz > 0]

    def row_lemma(name: str, kind: str, target_of: Callable, bound_of: Callable,
                  draw_of: Callable):
        tally = _Tally(name)
        mc_left = mc_rows
        for i in live:
            s = samplers[i]
            spec = EstimatorSpec(kind, d, sampler=s, x=x)
            target = np.atleast_1d(target_of(i))
            bound = bound_of(s)
            if space_size(spec) <= enum_budget:
                second, ok, mean_ok = _enum_check(spec, target, bound, inject_bias)
                tally.add(second, bound, ok, True,
                          f"row {i}: " + ("second moment above bound" if mean_ok else "biased mean"))
            elif mc_left > 0:
                mc_left -= 1
                rep = monte_carlo_moments(lambda g, s=s: scale * draw_of(s, g), target, bound,
                                          draws, rng)
                tally.add(rep.second_moment, bound, rep.passed, False, f"row {i}: Monte Carlo failed")
        return tally.res

    rows = mat.rows
    results.append(row_lemma(
        "samplevec", "samplevec", lambda i: rows[i].to_dense(d), samplevec_bound,
        lambda s, g: _vec(*samplevec(s, g), d)))
    results.append(row_lemma(
        "sampledotproduct", "sampledotproduct", lambda i: rows[i].dot(x),
        lambda s: sampledot_bound(s, x), lambda s, g: sampledotproduct(s, x, g)))
    results.append(row_lemma(
        "samplerankonemat", "samplerankonemat", lambda i: rows[i].to_dense(d) * rows[i].dot(x),
        lambda s: samplerankone_bound(s, x), lambda s, g: samplerankonemat(s, x, g).to_dense(d)))

    tally = _Tally("samplemat")
    target = mat.gram_matvec(x)
    bound = samplemat_bound(plan, mat, x)
    spec = EstimatorSpec("samplemat", d, x=x, plan=plan, samplers=samplers)
    if space_size(spec) <= enum_budget:
        second, ok, mean_ok = _enum_check(spec, target, bound, inject_bias)
        tally.add(second, bound, ok, True, "second moment above bound" if mean_ok else "biased mean")
    else:
        rep = monte_carlo_moments(lambda g: scale * samplemat(plan, samplers, x, g).to_dense(d),
                                  target, bound, draws, rng)
        tally.add(rep.second_moment, bound, rep.passed, False, "Monte Carlo failed")
    results.append(tally.res)
    return results
