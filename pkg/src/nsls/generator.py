"""Synthetic matrix families with controlled numerical sparsity and spectrum.

Every row is dense (``nnz = d``) with magnitudes ``|a_j| ∝ j^(-alpha)`` in a
random order and with random signs; the largest entry of each row is
spread evenly over the columns.  ``alpha`` is found by bisection so the
profile's numerical sparsity hits ``target_s``; ``s`` decreases monotonically
from ``d`` at ``alpha = 0`` towards 1.

With ``spectrum`` given, ``A = U S V^T`` is replaced by ``U diag(spectrum) V^T``
so the singular values match exactly.  That rotation changes the rows, so
``alpha`` is then re-solved against the mean ``s`` measured after it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .rng import make_rng
from .sparse_matrix import DENSE_ORACLE_LIMIT, RowMatrix, from_dense

# magnitudes stay above 1e-12 of the largest so rows remain fully dense
MIN_RATIO = 1e-12
S_TOLERANCE = 0.05


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    """Recipe for one synthetic matrix.

    ``decay`` fixes the power-law exponent directly; when ``None`` it is
    solved from ``target_s``.  ``spectrum`` lists the target singular values
    of ``A`` (so ``A^T A`` has eigenvalues ``spectrum**2``); when it is given
    ``row_norm`` is ignored because the spectrum fixes the scale.
    """

    n: int
    d: int
    target_s: float = 1.0
    decay: Optional[float] = None
    spectrum: Optional[tuple] = None
    row_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise GeneratorError("n and d must be positive")
        if not (1.0 <= self.target_s <= self.d):
            raise GeneratorError(f"target_s={self.target_s} infeasible: need 1 <= target_s <= d={self.d}")
        if self.decay is not None and self.decay < 0:
            raise GeneratorError("decay must be nonnegative")
        if not (self.row_norm > 0):
            raise GeneratorError("row_norm must be positive")
        if self.spectrum is not None:
            spec = tuple(float(x) for x in self.spectrum)
            if len(spec) != min(self.n, self.d):
                raise GeneratorError(f"spectrum needs min(n, d) = {min(self.n, self.d)} values")
            if any(x < 0 or not math.isfinite(x) for x in spec):
                raise GeneratorError("spectrum values must be finite and nonnegative")
            object.__setattr__(self, "spectrum", spec)

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d, "target_s": self.target_s, "decay": self.decay,
                "spectrum": list(self.spectrum) if self.spectrum is not None else None,
                "row_norm": self.row_norm, "seed": self.seed}


def profile(d: int, alpha: float) -> np.ndarray:
    return np.arange(1, d + 1, dtype=float) ** -alpha


def profile_sparsity(d: int, alpha: float) -> float:
    p = profile(d, alpha)
    return float(p.sum() ** 2 / (p @ p))


def max_decay(d: int) -> float:
    return math.log(1.0 / MIN_RATIO) / math.log(d) if d > 1 else 0.0


def _bisect(f, target: float, hi: float, iters: int = 100) -> float:
    """Root of the decreasing function ``f(alpha) = target`` on ``[0, hi]``."""
    lo = 0.0
    if f(lo) <= target:
        return lo
    if f(hi) >= target:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def solve_decay(d: int, target_s: float) -> float:
    """``alpha`` with ``profile_sparsity(d, alpha) = target_s`` (clamped to the feasible range)."""
    if d == 1:
        return 0.0
    return _bisect(lambda a: profile_sparsity(d, a), target_s, max_decay(d))


def _raw_rows(spec: GenSpec, alpha: float, perms: np.ndarray, signs: np.ndarray) -> np.ndarray:
    p = profile(spec.d, alpha)
    p *= spec.row_norm / np.linalg.norm(p)
    rows = np.empty(perms.shape)
    np.put_along_axis(rows, perms, np.broadcast_to(p, perms.shape), axis=1)
    return signs * rows


def _impose_spectrum(A: np.ndarray, spectrum: Sequence[float]) -> np.ndarray:
    U, _, Vt = np.linalg.svd(A, full_matrices=False)
    return (U * np.asarray(spectrum)) @ Vt


def mean_sparsity(A: np.ndarray) -> float:
    l1 = np.abs(A).sum(axis=1)
    l2 = np.einsum("ij,ij->i", A, A)
    s = np.where(l2 > 0, l1 * l1 / np.where(l2 > 0, l2, 1.0), 0.0)
    return float(s.mean())


def _balanced_perms(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Random per-row permutations whose first entry cycles through shuffled columns.

    ``perms[i, r]`` is the column holding the rank-``r`` magnitude of row
    ``i``.  Spreading the dominant coordinate evenly keeps every column of a
    near one-hot matrix populated.
    """
    perms = np.argsort(rng.random((n, d)), axis=1)
    reps = -(-n // d)
    lead = np.concatenate([rng.permutation(d) for _ in range(reps)])[:n]
    for i in range(n):
        k = int(np.flatnonzero(perms[i] == lead[i])[0])
        perms[i, k] = perms[i, 0]
        perms[i, 0] = lead[i]
    return perms


def generate(spec: GenSpec) -> RowMatrix:
    """Dense rows with mean numerical sparsity near ``spec.target_s``."""
    rng = make_rng(spec.seed)
    n, d = spec.n, spec.d
    perms = _balanced_perms(rng, n, d)
    signs = np.where(rng.random((n, d)) < 0.5, -1.0, 1.0)
    if spec.spectrum is None:
        alpha = spec.decay if spec.decay is not None else solve_decay(d, spec.target_s)
        return from_dense(_raw_rows(spec, alpha, perms, signs))

    def build(alpha):
        return _impose_spectrum(_raw_rows(spec, alpha, perms, signs), spec.spectrum)

    if spec.decay is not None:
        return from_dense(build(spec.decay))
    alpha0 = solve_decay(d, spec.target_s)
    A = build(alpha0)
    if abs(mean_sparsity(A) - spec.target_s) <= S_TOLERANCE * spec.target_s or d == 1:
        return from_dense(A)
    alpha = _bisect(lambda a: mean_sparsity(build(a)), spec.target_s, max_decay(d), iters=60)
    return from_dense(build(alpha))


def measure_family(mat: RowMatrix, dense_limit: int = DENSE_ORACLE_LIMIT) -> dict:
    """Summary statistics for reports.

    Spectral fields (``lambda1``, ``mu``, ``sr``, ``kappa``, ``gap``) come from
    the dense oracle and are ``None`` above ``dense_limit`` entries.
    """
    s = mat.num_sparsity
    out = {
        "n": mat.n_rows, "d": mat.n_cols, "nnz": int(mat.nnz), "frob_sq": float(mat.frob_sq),
        "mean_s": float(s.mean()) if s.size else 0.0,
        "min_s": float(s.min()) if s.size else 0.0,
        "max_s": float(s.max()) if s.size else 0.0,
        "lambda1": None, "mu": None, "sr": None, "kappa": None, "gap": None,
    }
    if mat.n_rows * mat.n_cols <= dense_limit and mat.frob_sq > 0:
        from .oracle import dense_spectrum

        sp = dense_spectrum(mat, limit=dense_limit)
        lam1, mu = sp.lambda1, sp.lambda_min
        out.update(lambda1=lam1, mu=mu, sr=mat.frob_sq / lam1,
                   kappa=mat.frob_sq / mu if mu > 1e-12 * lam1 else math.inf, gap=sp.gap)
    return out
