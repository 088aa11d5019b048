"""Brute-force ground truth for tests and the ``verify`` command.

Dense linear algebra on ``A^T A``, exact enumeration of estimator sample
spaces (the ``c`` i.i.d. draws are treated as ordered tuples), Monte Carlo
moment checks, and the closed-form second-moment bounds the estimators are
meant to satisfy.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .sampling import (RowSampler, SamplingPlan, sampledotproduct_from_draws,
                       samplerankonemat_from_draws, samplevec_from_draws)
from .sparse_matrix import DENSE_ORACLE_LIMIT, RowMatrix

ENUM_BUDGET = 100_000


class OracleLimitError(ValueError):
    pass


class SingularError(ValueError):
    pass


def _check_limit(mat: RowMatrix, limit: int) -> None:
    if mat.n_rows * mat.n_cols > limit:
        raise OracleLimitError(
            f"{mat.n_rows}x{mat.n_cols} exceeds the dense oracle limit of {limit} entries")


class SpectrumResult(NamedTuple):
    """Eigenvalues of ``A^T A`` in descending order and a unit top eigenvector."""

    eigenvalues: np.ndarray
    top_vector: np.ndarray

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def gap(self) -> float:
        ev = self.eigenvalues
        if ev.size == 1:
            return 1.0
        if ev[0] <= 0:
            return 0.0
        return float((ev[0] - ev[1]) / ev[0])


class DenseOracle:
    """Dense ``A^T A`` with a cached eigendecomposition; refuses large inputs."""

    def __init__(self, mat: RowMatrix, limit: int = DENSE_ORACLE_LIMIT):
        _check_limit(mat, limit)
        self.mat = mat
        self.limit = limit
        A = mat.to_dense()
        self.dense = A
        self.gram = A.T @ A
        self._eig: Optional[tuple[np.ndarray, np.ndarray]] = None

    @property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        if self._eig is None:
            w, V = np.linalg.eigh(self.gram)
            self._eig = (w[::-1].copy(), V[:, ::-1].copy())
        return self._eig

    def spectrum(self) -> SpectrumResult:
        w, V = self.eig
        w = np.maximum(w, 0.0)
        v = V[:, 0].copy()
        k = int(np.argmax(np.abs(v)))
        if v[k] < 0:
            v = -v
        return SpectrumResult(w, v)

    def is_singular(self) -> bool:
        w, _ = self.eig
        return not (w[-1] > 1e-12 * max(w[0], 0.0) * max(self.gram.shape[0], 1)) or w[0] <= 0

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.mat.n_rows,):
            raise ValueError("b has the wrong length")
        return self.solve_normal(self.dense.T @ b)

    def solve_normal(self, rhs) -> np.ndarray:
        """Solve ``A^T A x = rhs``."""
        if self.is_singular():
            raise SingularError("A^T A is singular")
        c = sla.cho_factor(self.gram)
        return sla.cho_solve(c, np.asarray(rhs, dtype=float))


def dense_solve(mat: RowMatrix, b, limit: int = DENSE_ORACLE_LIMIT) -> np.ndarray:
    """Least-squares solution from the normal equations."""
    return DenseOracle(mat, limit).solve(b)


def dense_spectrum(mat: RowMatrix, limit: int = DENSE_ORACLE_LIMIT) -> SpectrumResult:
    return DenseOracle(mat, limit).spectrum()


def function_gap(mat: RowMatrix, b, x, limit: int = DENSE_ORACLE_LIMIT) -> tuple[float, float]:
    """``(f(x) - f(x*), ||A(x - x*)||^2)`` for ``f(x) = ||Ax - b||^2 / 2``."""
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    xs = dense_solve(mat, b, limit)

    def f(z):
        r = mat.matvec(z) - b
        return 0.5 * math.fsum(r * r)

    e = mat.matvec(x - xs)
    return f(x) - f(xs), math.fsum(e * e)


# -- second-moment bounds ------------------------------------------------


def samplevec_second_moment(s: RowSampler) -> float:
    """Exact ``E||(a-hat)_c||^2 = ||a||^2 + (||a||_1^2 - ||a||^2) / c``."""
    a = s.row
    if s.exact:
        return a.l2sq
    return a.l2sq + (a.l1 ** 2 - a.l2sq) / s.c


def samplevec_bound(s: RowSampler) -> float:
    return s.row.l2sq * (1.0 + s.row.num_sparsity / s.c)


def sampledot_bound(s: RowSampler, x: np.ndarray) -> float:
    ax = s.row.dot(x)
    return ax * ax + s.tail_l2sq * float(x @ x) / s.c


def samplerankone_bound(s: RowSampler, x: np.ndarray) -> float:
    a = s.row
    ax = a.dot(x)
    return a.l2sq * (1 + a.num_sparsity / s.c) * (
        ax * ax + a.num_sparsity / s.c ** 2 * a.l2sq * float(x @ x))


def samplemat_bound(plan: SamplingPlan, mat: RowMatrix, x: np.ndarray) -> float:
    """``M (||Ax||^2 + ||A||_F^2 ||x||^2 / k^2)``."""
    ax = mat.matvec(x)
    return plan.M * (float(ax @ ax) + mat.frob_sq * float(x @ x) / plan.k ** 2)


def tail_bound_holds(row, c: int) -> bool:
    """``||tail_c(a)||^2 <= (s(a) / c) ||a||^2`` with a relative slack of 1e-12."""
    mags = np.sort(np.abs(row.values))[::-1]
    tail = float(np.sum(mags[c:] ** 2))
    return tail <= row.num_sparsity / c * row.l2sq * (1 + 1e-12)


# -- exact enumeration ---------------------------------------------------


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to enumerate and on what instance.

    ``kind`` is one of ``samplevec``, ``sampledotproduct``, ``samplerankonemat``
    or ``samplemat``.  Row-level kinds use ``sampler``; ``samplemat`` uses
    ``plan`` and ``samplers``.  ``d`` is the output dimension for vector kinds.
    """

    kind: str
    d: int
    sampler: Optional[RowSampler] = None
    x: Optional[np.ndarray] = None
    plan: Optional[SamplingPlan] = None
    samplers: Optional[Sequence[RowSampler]] = None


@dataclass(frozen=True)
class Enumeration:
    mean: np.ndarray
    second_moment: float
    outcomes: int
    total_prob: float


def _row_space(s: RowSampler) -> tuple[list, list, int]:
    """Per-draw supports and probabilities for the vector and tail draws."""
    if s.exact:
        return [], [], 1
    pv = s.tail_alias_l1.implied_probs()
    pt = s.tail_alias_l2.implied_probs()
    return pv, pt, len(pv) ** s.c * len(pt) ** s.c


def space_size(spec: EstimatorSpec) -> int:
    if spec.kind == "samplemat":
        total = 0
        for i, s in enumerate(spec.samplers):
            if spec.plan.p[i] > 0:
                total += _row_space(s)[2]
        return total
    s = spec.sampler
    if s.exact:
        return 1
    if spec.kind == "samplevec":
        return s.row.nnz ** s.c
    if spec.kind == "sampledotproduct":
        return s.tail_idx.size ** s.c
    return _row_space(s)[2]


def _tuples(probs, c):
    for combo in itertools.product(range(len(probs)), repeat=c):
        pr = 1.0
        for t in combo:
            pr *= probs[t]
        if pr > 0:
            yield combo, pr


def _enum_rankone(s: RowSampler, x, d: int, scale: float):
    if s.exact:
        est = samplerankonemat_from_draws(s, x, [], [], scale=scale)
        yield est.to_dense(d), 1.0
        return
    pv = s.tail_alias_l1.implied_probs()
    pt = s.tail_alias_l2.implied_probs()
    tails = list(_tuples(pt, s.c))
    for vc, pr_v in _tuples(pv, s.c):
        for tc, pr_t in tails:
            est = samplerankonemat_from_draws(s, x, vc, tc, scale=scale)
            yield est.to_dense(d), pr_v * pr_t


def enumerate_estimator(spec: EstimatorSpec, budget: int = ENUM_BUDGET) -> Enumeration:
    """Exact mean and second moment by summing over every outcome tuple."""
    size = space_size(spec)
    if size > budget:
        raise OracleLimitError(f"sample space of size {size} exceeds budget {budget}")
    d = spec.d
    s = spec.sampler

    def outcomes():
        if spec.kind == "samplevec":
            if s.exact:
                yield s.row.to_dense(d), 1.0
                return
            for combo, pr in _tuples(s.tail_alias_l1.implied_probs(), s.c):
                idx, vals = samplevec_from_draws(s, combo)
                out = np.zeros(d)
                out[idx] = vals
                yield out, pr
        elif spec.kind == "sampledotproduct":
            if s.exact or s.tail_idx.size == 0:
                yield np.array([sampledotproduct_from_draws(s, spec.x, [])]), 1.0
                return
            for combo, pr in _tuples(s.tail_alias_l2.implied_probs(), s.c):
                yield np.array([sampledotproduct_from_draws(s, spec.x, combo)]), pr
        elif spec.kind == "samplerankonemat":
            yield from _enum_rankone(s, spec.x, d, 1.0)
        elif spec.kind == "samplemat":
            plan = spec.plan
            for i, si in enumerate(spec.samplers):
                pi = plan.p[i]
                if pi <= 0:
                    continue
                for out, pr in _enum_rankone(si, spec.x, d, 1.0 / pi):
                    yield out, pi * pr
        else:
            raise ValueError(f"unknown estimator kind {spec.kind!r}")

    width = 1 if spec.kind == "sampledotproduct" else d
    mean = np.zeros(width)
    second = []
    total = []
    count = 0
    for out, pr in outcomes():
        mean += pr * out
        second.append(pr * float(out @ out))
        total.append(pr)
        count += 1
    return Enumeration(mean, math.fsum(second), count, math.fsum(total))


# -- Monte Carlo -----------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    mean_err: float
    mean_stderr: float
    second_moment: float
    bound: float
    stderr: float
    draws: int

    @property
    def passed(self) -> bool:
        scale = 1e-12 * max(1.0, self.bound)
        return (self.second_moment <= self.bound + 3.0 * self.stderr + scale
                and self.mean_err <= 3.0 * self.mean_stderr + scale)


def monte_carlo_moments(estimator: Callable[[np.random.Generator], np.ndarray], target,
                        bound: float, draws: int, rng: np.random.Generator) -> MomentReport:
    """Empirical mean error and second moment of ``estimator`` against ``target``.

    ``stderr`` is the standard error of the second-moment estimate;
    ``mean_stderr`` is ``sqrt(trace(Cov) / draws)``, the typical size of the
    mean error for an unbiased estimator.
    """
    if draws < 10_000:
        raise ValueError("draws must be at least 10^4")
    target = np.atleast_1d(np.asarray(target, dtype=float))
    total = np.zeros_like(target)
    total_sq = np.zeros_like(target)
    norms = np.empty(draws)
    for t in range(draws):
        y = np.atleast_1d(np.asarray(estimator(rng), dtype=float))
        total += y
        total_sq += y * y
        norms[t] = float(y @ y)
    mean = total / draws
    var = np.maximum(total_sq / draws - mean * mean, 0.0)
    mean_err = float(np.linalg.norm(mean - target))
    mean_stderr = float(math.sqrt(var.sum() / draws))
    second = float(norms.mean())
    stderr = float(norms.std(ddof=1) / math.sqrt(draws))
    return MomentReport(mean_err, mean_stderr, second, float(bound), stderr, draws)
