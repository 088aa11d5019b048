"""Coordinate-subsampled estimators of ``a``, ``a^T x``, ``a a^T x`` and ``A^T A x``.

Every random estimator here consumes uniforms from a ``numpy.random.Generator``
in a fixed order (row, then the vector draws, then the dot-product draws) so
that the compiled epoch kernel, fed the same stream, reproduces it exactly.
Each estimator also has a ``*_from_draws`` form that maps explicit draw
positions to the output; the enumeration oracle uses those.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .sparse_matrix import RowMatrix, SparseRow

log = logging.getLogger(__name__)


# -- alias tables ----------------------------------------------------------


@dataclass(frozen=True)
class AliasTable:
    """Walker/Vose alias table: O(K) build, O(1) draw from one uniform."""

    probs: np.ndarray
    alias: np.ndarray
    size: int

    def draw(self, u: float) -> int:
        x = u * self.size
        k = int(x)
        if k >= self.size:
            k = self.size - 1
        return k if (x - k) < self.probs[k] else int(self.alias[k])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x = rng.random(n) * self.size
        k = np.minimum(x.astype(np.int64), self.size - 1)
        return np.where(x - k < self.probs[k], k, self.alias[k])

    def implied_probs(self) -> np.ndarray:
        """Exact outcome probabilities encoded by the table."""
        out = self.probs / self.size
        np.add.at(out, self.alias, (1.0 - self.probs) / self.size)
        return out


def build_alias(weights) -> AliasTable:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d array")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("at least one weight must be positive")
    K = w.size
    scaled = w * (K / total)
    probs = np.ones(K)
    alias = np.arange(K, dtype=np.int64)
    small = [k for k in range(K) if scaled[k] < 1.0]
    large = [k for k in range(K) if scaled[k] >= 1.0]
    while small and large:
        s = small.pop()
        g = large[-1]
        probs[s] = scaled[s]
        alias[s] = g
        scaled[g] -= 1.0 - scaled[s]
        if scaled[g] < 1.0:
            large.pop()
            small.append(g)
    # leftovers are 1 up to rounding
    for k in small + large:
        probs[k] = 1.0
        alias[k] = k
    probs.setflags(write=False)
    alias.setflags(write=False)
    return AliasTable(probs, alias, K)


# -- per-row samplers ------------------------------------------------------


def top_c_split(a: SparseRow, c: int) -> tuple[SparseRow, SparseRow]:
    """Split ``a`` into its ``c`` largest-magnitude coordinates and the rest.

    Ties go to the lower coordinate index.
    """
    if c < 1:
        raise ValueError("c must be >= 1")
    order = np.lexsort((a.indices, -np.abs(a.values)))
    head = np.sort(order[:c])
    tail = np.sort(order[c:])
    return (SparseRow.from_arrays(a.indices[head], a.values[head]),
            SparseRow.from_arrays(a.indices[tail], a.values[tail]))


@dataclass(frozen=True)
class RowSampler:
    row: SparseRow
    c: int
    exact: bool
    head_idx: np.ndarray
    head_vals: np.ndarray
    tail_idx: np.ndarray
    tail_vals: np.ndarray
    tail_l2sq: float
    tail_alias_l1: Optional[AliasTable]
    tail_alias_l2: Optional[AliasTable]


def build_row_sampler(a: SparseRow, c: int) -> RowSampler:
    c = int(c)
    if c < 1:
        raise ValueError("c must be >= 1")
    head, tail = top_c_split(a, c)
    exact = c >= a.nnz
    l1_table = build_alias(np.abs(a.values)) if a.nnz and not exact else None
    l2_table = build_alias(tail.values ** 2) if tail.nnz and not exact else None
    # direct sum is more accurate than ||a||^2 - ||head||^2 when the tail is tiny
    tail_l2sq = tail.l2sq if tail.nnz else 0.0
    return RowSampler(a, c, exact, head.indices, head.values, tail.indices, tail.values,
                      tail_l2sq, l1_table, l2_table)


def _read(x, idx: np.ndarray) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x[idx]
    return np.array([x[int(j)] for j in idx], dtype=float)


def _accumulate(idx: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(idx, return_inverse=True)
    out = np.zeros(uniq.size)
    np.add.at(out, inv, vals)
    return uniq, out


def samplevec_from_draws(s: RowSampler, positions) -> tuple[np.ndarray, np.ndarray]:
    """Output for draws at ``positions`` (offsets into the stored row entries)."""
    pos = np.asarray(positions, dtype=np.int64)
    a = s.row
    # a_j / p_j with p_j = |a_j| / ||a||_1
    contrib = np.sign(a.values[pos]) * a.l1 / s.c
    return _accumulate(a.indices[pos], contrib)


def samplevec(s: RowSampler, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if s.exact:
        return s.row.indices.copy(), s.row.values.copy()
    pos = [s.tail_alias_l1.draw(rng.random()) for _ in range(s.c)]
    return samplevec_from_draws(s, pos)


def sampledotproduct_from_draws(s: RowSampler, x, tail_positions) -> float:
    """Head dot product plus the importance-weighted tail draws at ``tail_positions``."""
    head = float(np.dot(s.head_vals, _read(x, s.head_idx))) if s.head_idx.size else 0.0
    pos = np.asarray(tail_positions, dtype=np.int64)
    if pos.size == 0:
        return head
    av = s.tail_vals[pos]
    xv = _read(x, s.tail_idx[pos])
    # a_j x_j / p_j with p_j = a_j^2 / ||tail||^2
    return head + float(np.sum(xv * s.tail_l2sq / av)) / s.c


def sampledotproduct(s: RowSampler, x, rng: np.random.Generator) -> float:
    if s.tail_idx.size == 0 or s.exact:
        return sampledotproduct_from_draws(s, x, [])
    pos = [s.tail_alias_l2.draw(rng.random()) for _ in range(s.c)]
    return sampledotproduct_from_draws(s, x, pos)


@dataclass(frozen=True)
class GradientEstimate:
    row_id: int
    indices: np.ndarray
    values: np.ndarray
    scalar_dot: float
    touch_count: int

    def to_dense(self, d: int) -> np.ndarray:
        out = np.zeros(d)
        np.add.at(out, self.indices, self.values)
        return out


def step_touches(s: RowSampler) -> int:
    """Coordinate touches for one estimate on this row, including applying it.

    Sampled rows: one row pick, ``c`` vector draws, ``c`` head reads, ``c``
    tail draws and ``c`` writes of the result.  Exact rows: one row pick,
    ``nnz`` reads for the dot product and ``nnz`` writes.
    """
    if s.exact:
        return 1 + 2 * s.row.nnz
    return 1 + 4 * s.c


def samplerankonemat_from_draws(s: RowSampler, x, vec_positions, tail_positions,
                                row_id: int = -1, scale: float = 1.0) -> GradientEstimate:
    if s.exact:
        dot = s.row.dot(x) if isinstance(x, np.ndarray) else float(np.dot(s.row.values, _read(x, s.row.indices)))
        return GradientEstimate(row_id, s.row.indices.copy(), scale * dot * s.row.values,
                                dot, step_touches(s))
    idx, vals = samplevec_from_draws(s, vec_positions)
    dot = sampledotproduct_from_draws(s, x, tail_positions)
    return GradientEstimate(row_id, idx, scale * dot * vals, dot, step_touches(s))


def samplerankonemat(s: RowSampler, x, rng: np.random.Generator,
                     row_id: int = -1, scale: float = 1.0) -> GradientEstimate:
    """``(a-hat)_c * (a^T x-hat)_c`` with independent draws for the two factors."""
    if s.exact:
        return samplerankonemat_from_draws(s, x, [], [], row_id, scale)
    vec_pos = [s.tail_alias_l1.draw(rng.random()) for _ in range(s.c)]
    if s.tail_idx.size:
        tail_pos = [s.tail_alias_l2.draw(rng.random()) for _ in range(s.c)]
    else:
        tail_pos = []
    return samplerankonemat_from_draws(s, x, vec_pos, tail_pos, row_id, scale)


# -- matrix-level plan -----------------------------------------------------


@dataclass(frozen=True)
class SamplingPlan:
    """Row distribution and per-row budgets for ``Samplemat(A, x, k)``.

    ``p_i = ||a_i||^2 (1 + s_i / c_i) / M``.  ``frob_sampled`` is the squared
    Frobenius mass of rows that are actually subsampled (not exact); the
    variance bounds only pay the ``1/k^2`` term for those rows.
    """

    k: float
    c_per_row: np.ndarray
    p: np.ndarray
    row_alias: Optional[AliasTable]
    M: float
    exact_rows: np.ndarray
    frob_sampled: float
    sigma_sq: Optional[float] = None
    fallback_exact: bool = False

    def with_sigma_sq(self, sigma_sq: float) -> "SamplingPlan":
        return replace(self, sigma_sq=float(sigma_sq))


def ceil_budget(x: float) -> int:
    # guard against s_i = 1 + 1e-16 turning ceil(16.0000..) into 17
    return int(math.ceil(x - 1e-9))


def build_plan(mat: RowMatrix, k: float, force_exact: bool = False) -> SamplingPlan:
    if not force_exact and not (k > 0):
        raise ValueError("k must be positive")
    d = mat.n_cols
    s = mat.num_sparsity
    l2 = mat.row_l2sq
    n = mat.n_rows
    c = np.ones(n, dtype=np.int64)
    exact = np.zeros(n, dtype=bool)
    for i, r in enumerate(mat.rows):
        if r.nnz == 0:
            exact[i] = True
            continue
        ci = r.nnz if force_exact else min(max(ceil_budget(math.sqrt(s[i]) * k), 1), d)
        c[i] = ci
        exact[i] = ci >= r.nnz
    safe_s = np.where(l2 > 0, s, 0.0)
    weights = l2 * (1.0 + safe_s / c)
    M = float(math.fsum(weights))
    if M > 0:
        p = weights / M
        table = build_alias(weights)
    else:
        p = np.zeros(n)
        table = None
    frob_sampled = float(math.fsum(l2[~exact]))
    for arr in (c, exact, p):
        arr.setflags(write=False)
    return SamplingPlan(float(k), c, p, table, M, exact, frob_sampled,
                        fallback_exact=force_exact)


def build_samplers(mat: RowMatrix, plan: SamplingPlan) -> list[RowSampler]:
    return [build_row_sampler(r, int(plan.c_per_row[i]) if r.nnz else 1)
            for i, r in enumerate(mat.rows)]


def samplemat_from_draws(plan: SamplingPlan, samplers: Sequence[RowSampler], x, row: int,
                         vec_positions, tail_positions) -> GradientEstimate:
    return samplerankonemat_from_draws(samplers[row], x, vec_positions, tail_positions,
                                       row_id=row, scale=1.0 / plan.p[row])


def samplemat(plan: SamplingPlan, samplers: Sequence[RowSampler], x,
              rng: np.random.Generator) -> GradientEstimate:
    """Unbiased estimate of ``A^T A x`` touching ``O(c_i)`` coordinates."""
    if plan.row_alias is None:
        raise ValueError("plan has no sampling mass (all rows are zero)")
    i = plan.row_alias.draw(rng.random())
    return samplerankonemat(samplers[i], x, rng, row_id=i, scale=1.0 / plan.p[i])


def expected_touches(plan: SamplingPlan, samplers: Sequence[RowSampler]) -> float:
    """``sum_i p_i * step_touches(row i)``: mean cost of one inner step."""
    return float(sum(plan.p[i] * step_touches(s) for i, s in enumerate(samplers) if plan.p[i] > 0))


def row_sampling_variance_bound(plan: SamplingPlan, mat: RowMatrix, x: np.ndarray) -> float:
    """Second-moment bound ``M (||A x||^2 + ||A_sampled||_F^2 ||x||^2 / k^2)``."""
    ax = mat.matvec(x)
    return plan.M * (float(ax @ ax) + plan.frob_sampled * float(x @ x) / plan.k ** 2)


# -- flat arrays for the compiled kernel ----------------------------------


class PackedPlan(NamedTuple):
    row_prob: np.ndarray
    row_alias: np.ndarray
    row_pinv: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    l1_prob: np.ndarray
    l1_alias: np.ndarray
    l1norm: np.ndarray
    c: np.ndarray
    exact: np.ndarray
    head_ptr: np.ndarray
    head_idx: np.ndarray
    head_val: np.ndarray
    tail_ptr: np.ndarray
    tail_idx: np.ndarray
    tail_val: np.ndarray
    tail_prob: np.ndarray
    tail_alias: np.ndarray
    tail_l2sq: np.ndarray
    max_draws: int


def pack(plan: SamplingPlan, samplers: Sequence[RowSampler]) -> PackedPlan:
    n = len(samplers)
    if plan.row_alias is None:
        raise ValueError("plan has no sampling mass (all rows are zero)")
    indptr = np.zeros(n + 1, dtype=np.int64)
    head_ptr = np.zeros(n + 1, dtype=np.int64)
    tail_ptr = np.zeros(n + 1, dtype=np.int64)
    idx, val, l1p, l1a = [], [], [], []
    hidx, hval, tidx, tval, tp, ta = [], [], [], [], [], []
    for i, s in enumerate(samplers):
        r = s.row
        indptr[i + 1] = indptr[i] + r.nnz
        idx.append(r.indices)
        val.append(r.values)
        if s.tail_alias_l1 is not None:
            l1p.append(s.tail_alias_l1.probs)
            l1a.append(s.tail_alias_l1.alias)
        else:
            l1p.append(np.ones(r.nnz))
            l1a.append(np.arange(r.nnz, dtype=np.int64))
        head_ptr[i + 1] = head_ptr[i] + s.head_idx.size
        hidx.append(s.head_idx)
        hval.append(s.head_vals)
        tail_ptr[i + 1] = tail_ptr[i] + s.tail_idx.size
        tidx.append(s.tail_idx)
        tval.append(s.tail_vals)
        if s.tail_alias_l2 is not None:
            tp.append(s.tail_alias_l2.probs)
            ta.append(s.tail_alias_l2.alias)
        else:
            tp.append(np.ones(s.tail_idx.size))
            ta.append(np.arange(s.tail_idx.size, dtype=np.int64))

    def cat(parts, dtype):
        return np.ascontiguousarray(np.concatenate(parts).astype(dtype)) if parts else np.zeros(0, dtype)

    sampled = [s.c for s in samplers if not s.exact]
    max_draws = 1 + 2 * max(sampled, default=0)
    with np.errstate(divide="ignore"):
        pinv = np.where(plan.p > 0, 1.0 / np.where(plan.p > 0, plan.p, 1.0), 0.0)
    return PackedPlan(
        np.ascontiguousarray(plan.row_alias.probs, dtype=np.float64),
        np.ascontiguousarray(plan.row_alias.alias, dtype=np.int64),
        pinv,
        indptr, cat(idx, np.int64), cat(val, np.float64),
        cat(l1p, np.float64), cat(l1a, np.int64),
        np.array([s.row.l1 for s in samplers]),
        np.array([s.c for s in samplers], dtype=np.int64),
        np.array([s.exact for s in samplers], dtype=np.bool_),
        head_ptr, cat(hidx, np.int64), cat(hval, np.float64),
        tail_ptr, cat(tidx, np.int64), cat(tval, np.float64),
        cat(tp, np.float64), cat(ta, np.int64),
        np.array([s.tail_l2sq for s in samplers]),
        int(max_draws),
    )
