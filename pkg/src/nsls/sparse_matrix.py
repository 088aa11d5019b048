"""Row-major sparse matrix storage with the per-row statistics the samplers need.

A :class:`RowMatrix` is a tuple of :class:`SparseRow` objects.  Every row
carries its l1 norm, squared l2 norm and numerical sparsity
``s(a) = ||a||_1^2 / ||a||_2^2`` so that sampling plans can be built without
another pass over the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

DENSE_ORACLE_LIMIT = 250_000


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input; ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)


class SpectrumError(ValueError):
    pass


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SparseRow:
    """One row ``a`` of the data matrix in sorted coordinate form.

    ``num_sparsity`` is 0 for an all-zero row (the ratio is undefined there);
    such rows are kept so row indices stay aligned with ``b`` but they never
    receive sampling mass.
    """

    indices: np.ndarray
    values: np.ndarray
    l1: float
    l2sq: float
    num_sparsity: float

    @classmethod
    def from_arrays(cls, indices: Iterable[int], values: Iterable[float]) -> "SparseRow":
        idx = np.asarray(indices, dtype=np.int64).copy()
        val = np.asarray(values, dtype=np.float64).copy()
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ValueError("row indices must be strictly increasing")
        if np.any(val == 0.0):
            raise ValueError("explicit zeros are not stored")
        if not np.all(np.isfinite(val)):
            raise ValueError("row values must be finite")
        l1 = float(np.abs(val).sum())
        l2sq = float(np.dot(val, val))
        s = l1 * l1 / l2sq if l2sq > 0 else 0.0
        # rounding can push s a hair outside [1, nnz]
        if idx.size:
            s = min(max(s, 1.0), float(idx.size))
        return cls(_readonly(idx), _readonly(val), l1, l2sq, s)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self, d: int) -> np.ndarray:
        out = np.zeros(d)
        out[self.indices] = self.values
        return out

    def dot(self, x: np.ndarray) -> float:
        return float(np.dot(self.values, x[self.indices]))


@dataclass(frozen=True)
class RowMatrix:
    n_rows: int
    n_cols: int
    rows: tuple[SparseRow, ...]
    frob_sq: float
    row_l2sq_max: float

    @classmethod
    def from_rows(cls, rows: Sequence[SparseRow], n_cols: int) -> "RowMatrix":
        rows = tuple(rows)
        for i, r in enumerate(rows):
            if r.nnz and (r.indices[0] < 0 or r.indices[-1] >= n_cols):
                raise ValueError(f"row {i} has a column index outside [0, {n_cols})")
        frob = math.fsum(r.l2sq for r in rows)
        mx = max((r.l2sq for r in rows), default=0.0)
        return cls(len(rows), int(n_cols), rows, frob, mx)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return sum(r.nnz for r in self.rows)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        indptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([r.nnz for r in self.rows])
        if self.n_rows:
            indices = np.concatenate([r.indices for r in self.rows]) if indptr[-1] else np.zeros(0, np.int64)
            data = np.concatenate([r.values for r in self.rows]) if indptr[-1] else np.zeros(0)
        else:
            indices, data = np.zeros(0, np.int64), np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=self.shape)

    @cached_property
    def num_sparsity(self) -> np.ndarray:
        return _readonly(np.array([r.num_sparsity for r in self.rows]))

    @cached_property
    def row_l2sq(self) -> np.ndarray:
        return _readonly(np.array([r.l2sq for r in self.rows]))

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.csr.T @ y

    def gram_matvec(self, x: np.ndarray) -> np.ndarray:
        """``A^T A x`` in two sparse passes."""
        return self.csr.T @ (self.csr @ x)

    def norm2_upper_bound(self) -> float:
        """Cheap certified upper bound on ``lambda_1(A^T A) = ||A||_2^2``.

        Uses ``||A||_2^2 <= min(||A||_F^2, ||A||_1 ||A||_inf)``.
        """
        if self.nnz == 0:
            return 0.0
        absA = abs(self.csr)
        one = float(np.max(np.asarray(absA.sum(axis=0)).ravel()))
        inf = float(np.max(np.asarray(absA.sum(axis=1)).ravel()))
        return min(self.frob_sq, one * inf)


def from_dense(values, drop_tol: float = 0.0) -> RowMatrix:
    """Build a :class:`RowMatrix` keeping entries with ``|v| > drop_tol``."""
    if drop_tol < 0:
        raise ValueError("drop_tol must be nonnegative")
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError("expected a 2-d grid of values")
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        i, j = (int(t) for t in bad[0])
        raise ValueError(f"non-finite entry at ({i}, {j}): {arr[i, j]!r}")
    rows = []
    for i in range(arr.shape[0]):
        keep = np.flatnonzero(np.abs(arr[i]) > drop_tol)
        rows.append(SparseRow.from_arrays(keep, arr[i, keep]))
    return RowMatrix.from_rows(rows, arr.shape[1])


def from_scipy(mat) -> RowMatrix:
    csr = sp.csr_matrix(mat, dtype=np.float64)
    csr.sum_duplicates()
    csr.eliminate_zeros()
    csr.sort_indices()
    if csr.nnz and not np.all(np.isfinite(csr.data)):
        raise ValueError("matrix has non-finite entries")
    rows = [
        SparseRow.from_arrays(csr.indices[a:b], csr.data[a:b])
        for a, b in zip(csr.indptr[:-1], csr.indptr[1:])
    ]
    return RowMatrix.from_rows(rows, csr.shape[1])


# -- Matrix Market ---------------------------------------------------------


def load_matrix_market(path) -> RowMatrix:
    """Read a real, general Matrix Market file (coordinate or array layout).

    Duplicate coordinate entries are summed.
    """
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    header = lines[0].strip().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("missing '%%MatrixMarket' banner", 1)
    obj, layout, field, symmetry = (h.lower() for h in header[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"unsupported object {obj!r}", 1)
    if layout not in ("coordinate", "array"):
        raise MatrixMarketError(f"unsupported format {layout!r}", 1)
    if field not in ("real", "integer", "double"):
        raise MatrixMarketError(f"unsupported field {field!r}", 1)
    if symmetry != "general":
        raise MatrixMarketError(f"unsupported symmetry {symmetry!r}", 1)

    body = [
        (k + 1, ln.strip())
        for k, ln in enumerate(lines)
        if k > 0 and ln.strip() and not ln.lstrip().startswith("%")
    ]
    if not body:
        raise MatrixMarketError("missing size line", len(lines))
    size_no, size_line = body[0]
    try:
        dims = [int(t) for t in size_line.split()]
    except ValueError:
        raise MatrixMarketError(f"bad size line {size_line!r}", size_no) from None
    entries = body[1:]

    if layout == "coordinate":
        if len(dims) != 3:
            raise MatrixMarketError("coordinate size line needs 'rows cols nnz'", size_no)
        n, d, nnz = dims
        if n < 0 or d < 0 or nnz < 0:
            raise MatrixMarketError("negative dimension", size_no)
        if len(entries) != nnz:
            last = entries[-1][0] if entries else size_no
            raise MatrixMarketError(f"expected {nnz} entries, found {len(entries)}", last)
        ri = np.empty(nnz, dtype=np.int64)
        ci = np.empty(nnz, dtype=np.int64)
        vv = np.empty(nnz)
        for t, (no, ln) in enumerate(entries):
            parts = ln.split()
            if len(parts) != 3:
                raise MatrixMarketError(f"expected 'row col value', got {ln!r}", no)
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise MatrixMarketError(f"unparseable entry {ln!r}", no) from None
            if not (1 <= i <= n and 1 <= j <= d):
                raise MatrixMarketError(f"entry ({i}, {j}) outside {n}x{d}", no)
            if not math.isfinite(v):
                raise MatrixMarketError(f"non-finite value {parts[2]!r}", no)
            ri[t], ci[t], vv[t] = i - 1, j - 1, v
        coo = sp.coo_matrix((vv, (ri, ci)), shape=(n, d))
        return from_scipy(coo.tocsr())

    if len(dims) != 2:
        raise MatrixMarketError("array size line needs 'rows cols'", size_no)
    n, d = dims
    if n < 0 or d < 0:
        raise MatrixMarketError("negative dimension", size_no)
    if len(entries) != n * d:
        last = entries[-1][0] if entries else size_no
        raise MatrixMarketError(f"expected {n * d} values, found {len(entries)}", last)
    flat = np.empty(n * d)
    for t, (no, ln) in enumerate(entries):
        try:
            flat[t] = float(ln.split()[0])
        except (ValueError, IndexError):
            raise MatrixMarketError(f"unparseable value {ln!r}", no) from None
        if not math.isfinite(flat[t]):
            raise MatrixMarketError(f"non-finite value {ln!r}", no)
    # array layout is column-major
    return from_dense(flat.reshape(d, n).T)


def write_matrix_market(mat: RowMatrix, path, layout: str = "coordinate") -> None:
    out = ["%%MatrixMarket matrix " + layout + " real general"]
    if layout == "coordinate":
        out.append(f"{mat.n_rows} {mat.n_cols} {mat.nnz}")
        for i, r in enumerate(mat.rows):
            for j, v in zip(r.indices, r.values):
                out.append(f"{i + 1} {int(j) + 1} {float(v)!r}")
    elif layout == "array":
        out.append(f"{mat.n_rows} {mat.n_cols}")
        dense = mat.to_dense()
        for v in dense.T.ravel():
            out.append(repr(float(v)))
    else:
        raise ValueError(f"unknown layout {layout!r}")
    Path(path).write_text("\n".join(out) + "\n")


# -- spectral statistics ---------------------------------------------------


@dataclass(frozen=True)
class SpectralStats:
    lambda1_est: float
    mu_est: Optional[float]
    stable_rank_est: float
    kappa_est: float
    gap_est: Optional[float]
    rq_history: tuple[float, ...] = ()


def power_iteration(mat: RowMatrix, iters: int, rng: np.random.Generator,
                    v0: Optional[np.ndarray] = None) -> tuple[np.ndarray, list[float]]:
    v = rng.standard_normal(mat.n_cols) if v0 is None else np.array(v0, dtype=float)
    v /= np.linalg.norm(v)
    hist = []
    for _ in range(iters):
        u = mat.gram_matvec(v)
        hist.append(float(v @ u))
        nu = np.linalg.norm(u)
        if nu == 0:
            break
        v = u / nu
    return v, hist


def estimate_spectral(mat: RowMatrix, power_iters: int = 200, seed: int = 0,
                      mu: Optional[float] = None,
                      dense_oracle_limit: int = DENSE_ORACLE_LIMIT) -> SpectralStats:
    """Estimate ``lambda_1``, ``mu = lambda_d``, stable rank, ``kappa`` and gap of ``A^T A``.

    ``lambda_1`` comes from power iteration (its Rayleigh quotients never
    decrease).  ``mu`` and the gap need the dense oracle, which is used only
    when ``n_rows * n_cols <= dense_oracle_limit``; above that ``mu`` must be
    supplied and the gap is left unknown.
    """
    if power_iters < 1:
        raise ValueError("power_iters must be >= 1")
    if mat.frob_sq == 0.0:
        raise SpectrumError("spectrum undefined for zero matrix")
    rng = np.random.Generator(np.random.Philox(seed))
    _, hist = power_iteration(mat, power_iters, rng)
    lam1 = max(hist)
    gap = None
    if mat.n_rows * mat.n_cols <= dense_oracle_limit:
        from .oracle import dense_spectrum

        evals, _ = dense_spectrum(mat, limit=dense_oracle_limit)
        lam1 = max(lam1, float(evals[0]))
        if mu is None:
            mu = float(evals[-1])
            if mu <= 1e-12 * evals[0]:
                mu = 0.0
        gap = float((evals[0] - evals[1]) / evals[0]) if evals.size > 1 else 1.0
    sr = mat.frob_sq / lam1
    kappa = mat.frob_sq / mu if mu else math.inf
    return SpectralStats(lam1, mu, sr, kappa, gap, tuple(hist))


# -- ridge augmentation ----------------------------------------------------


def augment_ridge(mat: RowMatrix, b, lam: float, x0) -> tuple[RowMatrix, np.ndarray]:
    """Append ``sqrt(lam) e_j`` rows so that
    ``||A~ x - b~||^2 = ||A x - b||^2 + lam ||x - x0||^2``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    b = np.asarray(b, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if b.shape != (mat.n_rows,) or x0.shape != (mat.n_cols,):
        raise ValueError("dimension mismatch between matrix, b and x0")
    r = math.sqrt(lam)
    extra = [SparseRow.from_arrays([j], [r]) for j in range(mat.n_cols)]
    aug = RowMatrix.from_rows(mat.rows + tuple(extra), mat.n_cols)
    return aug, np.concatenate([b, r * x0])
