"""Epoch-structured SVRG with an implicit iterate.

Inner step (minimization form)::

    x_{k+1} = x_k - eta * (grad_g(x_k) - grad_g(x_0) + grad_f(x_0))

For a quadratic with Hessian ``H = lam_shift*I + sgn*A^T A`` the estimator
difference splits into a dense part ``lam_shift*(x_k - x_0)`` and a sparse
part ``sgn*S(x_k - x_0)`` where ``S`` is samplemat with one shared draw.  The
dense part and ``grad_f(x_0)`` only change scalar coefficients of
:class:`ImplicitIterate`, so a step costs ``O(c_i)``.

Two epoch drivers live here: :func:`run_epoch`, a plain-Python loop over
arbitrary ``grad_est`` callables (the reference), and :func:`kernel_epoch`,
which runs the compiled loop for samplemat-based systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .report import CostMeter, SolveReport, Stopwatch
from .sampling import PackedPlan, SamplingPlan, samplemat
from .sparse_matrix import RowMatrix

ETA_CONST = 8.0
M_CONST = 64.0
RENORM_THRESHOLD = 1e-6
DIVERGENCE_FACTOR = 1e8
# gradients below this multiple of ||rhs|| + L ||x|| are rounding noise
ROUNDING_FLOOR = 1e-13


class DivergenceError(RuntimeError):
    """Non-finite iterate; ``step`` is the inner step index within the epoch."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite iterate at inner step {step} (step size too large?)")


class NotStronglyConvexError(ValueError):
    pass


# -- implicit iterate ------------------------------------------------------


class ImplicitIterate:
    """``x = gamma*v + delta0*anchor + delta1*w`` with O(1) coordinate reads.

    Also keeps the running sum of iterates lazily: ``acc[j]`` holds the
    flushed part of ``sum_k gamma_k v_k[j]`` and ``stamp[j]`` the value of
    ``G = sum gamma`` at the last flush of coordinate ``j``.
    """

    def __init__(self, anchor: np.ndarray, w: np.ndarray,
                 renorm_threshold: float = RENORM_THRESHOLD, v: Optional[np.ndarray] = None,
                 gamma: float = 1.0, delta0: float = 1.0, delta1: float = 0.0):
        self.anchor = np.asarray(anchor, dtype=float)
        self.w = np.asarray(w, dtype=float)
        d = self.anchor.size
        self.v = np.zeros(d) if v is None else np.array(v, dtype=float)
        self.gamma = float(gamma)
        self.delta0 = float(delta0)
        self.delta1 = float(delta1)
        self.renorm_threshold = renorm_threshold
        self.acc = np.zeros(d)
        self.stamp = np.zeros(d)
        self.G = 0.0
        self.sum_d0 = 0.0
        self.sum_d1 = 0.0
        self.steps = 0
        self.renorms = 0

    def __getitem__(self, j: int) -> float:
        return self.gamma * self.v[j] + self.delta0 * self.anchor[j] + self.delta1 * self.w[j]

    def read(self, idx: np.ndarray) -> np.ndarray:
        return self.gamma * self.v[idx] + self.delta0 * self.anchor[idx] + self.delta1 * self.w[idx]

    def materialize(self) -> np.ndarray:
        return self.gamma * self.v + self.delta0 * self.anchor + self.delta1 * self.w

    def diff_view(self) -> "DiffView":
        return DiffView(self)

    def apply(self, scale: float, shift0: float, shift1: float,
              idx: np.ndarray, vals: np.ndarray) -> None:
        """``x <- scale*x + shift0*anchor + shift1*w + sparse(idx, vals)``."""
        if scale == 0.0:
            raise ValueError("scale must be nonzero")
        self.gamma *= scale
        self.delta0 = scale * self.delta0 + shift0
        self.delta1 = scale * self.delta1 + shift1
        self.add_sparse(idx, vals)

    def add_sparse(self, idx, vals) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return
        vals = np.asarray(vals, dtype=float)
        self.acc[idx] += self.v[idx] * (self.G - self.stamp[idx])
        self.stamp[idx] = self.G
        np.add.at(self.v, idx, vals / self.gamma)

    def close_step(self) -> None:
        """Record the current iterate in the running sum."""
        self.G += self.gamma
        self.sum_d0 += self.delta0
        self.sum_d1 += self.delta1
        self.steps += 1
        if abs(self.gamma) < self.renorm_threshold:
            self.renormalize()

    def renormalize(self) -> None:
        self.acc += self.v * (self.G - self.stamp)
        self.v *= self.gamma
        self.stamp[:] = 0.0
        self.G = 0.0
        self.gamma = 1.0
        self.renorms += 1

    def average(self) -> np.ndarray:
        """Mean of the iterates recorded by :meth:`close_step`."""
        if self.steps == 0:
            return self.materialize()
        m = self.steps
        total = self.acc + self.v * (self.G - self.stamp)
        return total / m + (self.sum_d0 / m) * self.anchor + (self.sum_d1 / m) * self.w


class DiffView:
    """Read-only view of ``x - anchor``."""

    __slots__ = ("it",)

    def __init__(self, it: ImplicitIterate):
        self.it = it

    def __getitem__(self, j: int) -> float:
        it = self.it
        return it.gamma * it.v[j] + (it.delta0 - 1.0) * it.anchor[j] + it.delta1 * it.w[j]


# -- parameters -----------------------------------------------------------


@dataclass(frozen=True)
class SvrgParams:
    eta: float
    m: int
    sigma_sq: float
    mu: float
    epochs: int = 50
    renorm_threshold: float = RENORM_THRESHOLD

    def __post_init__(self):
        if not (2.0 * self.eta * self.sigma_sq < 1.0):
            raise ValueError("need 2*eta*sigma_sq < 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not (self.rate_factor < 1.0):
            raise ValueError(f"rate factor {self.rate_factor:.4g} >= 1; no contraction")

    @property
    def rate_factor(self) -> float:
        """``(1/(1 - 2 eta s2)) * (1/(m eta mu) + 2 eta s2)``: expected f-gap ratio per epoch."""
        t = 2.0 * self.eta * self.sigma_sq
        return (1.0 / (1.0 - t)) * (1.0 / (self.m * self.eta * self.mu) + t)


def derive_params(sigma_sq: float, mu: float, eta: Optional[float] = None,
                  m: Optional[int] = None, epochs: int = 50,
                  eta_const: float = ETA_CONST, m_const: float = M_CONST,
                  renorm_threshold: float = RENORM_THRESHOLD) -> SvrgParams:
    """Defaults ``eta = 1/(8 sigma^2)`` and ``m = ceil(64 sigma^2 / mu)`` give rate factor 1/2."""
    if not (mu > 0):
        raise NotStronglyConvexError("not strongly convex (mu <= 0)")
    if not (sigma_sq > 0):
        raise ValueError("sigma_sq must be positive")
    if eta is None:
        eta = 1.0 / (eta_const * sigma_sq)
    if m is None:
        m = int(math.ceil(m_const * sigma_sq / mu - 1e-9))
    return SvrgParams(float(eta), int(m), float(sigma_sq), float(mu), epochs, renorm_threshold)


@dataclass
class EpochResult:
    output: np.ndarray
    touches: int
    steps: int
    renorms: int = 0
    residual: Optional[float] = None


# -- reference epoch ------------------------------------------------------

GradFull = Callable[[np.ndarray], np.ndarray]
# grad_est(diff, rng) -> (indices, values, touches): sparse estimate of
# grad_g(x_k) - grad_g(x_0) minus its dense lam_shift*(x_k - x_0) part; diff
# reads coordinates of x_k - x_0.  It must use one draw for both points, which
# for a linear estimator means evaluating it once on the difference.
GradEst = Callable[[DiffView, np.random.Generator], tuple]


def run_epoch(grad_full: GradFull, grad_est: GradEst, x0, params: SvrgParams,
              rng: np.random.Generator, lam_shift: float = 0.0,
              residual: Optional[Callable[[np.ndarray], float]] = None) -> EpochResult:
    x0 = np.asarray(x0, dtype=float)
    w = np.asarray(grad_full(x0), dtype=float)
    it = ImplicitIterate(x0, w, params.renorm_threshold)
    eta = params.eta
    r = 1.0 - eta * lam_shift
    touches = 0
    for k in range(params.m):
        idx, vals, t = grad_est(it.diff_view(), rng)
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise DivergenceError(k)
        touches += int(t)
        it.apply(r, eta * lam_shift, -eta, idx, -eta * vals)
        it.close_step()
    out = it.average()
    if not np.all(np.isfinite(out)):
        raise DivergenceError(params.m)
    res = residual(out) if residual is not None else None
    return EpochResult(out, touches, params.m, it.renorms, res)


@dataclass
class SvrgProblem:
    grad_full: GradFull
    grad_est: GradEst
    sigma_sq: float
    mu: float
    error_metric: Callable[[np.ndarray], float]
    lam_shift: float = 0.0
    eta: Optional[float] = None
    m: Optional[int] = None


def solve_constant_factor(problem: SvrgProblem, x_init, target_ratio: float, max_epochs: int,
                          rng: np.random.Generator) -> tuple[np.ndarray, SolveReport]:
    """Chain reference epochs until ``error_metric`` drops by ``target_ratio``."""
    if not (0 < target_ratio):
        raise ValueError("target_ratio must be positive")
    watch = Stopwatch()
    params = derive_params(problem.sigma_sq, problem.mu, problem.eta, problem.m, max_epochs)
    x = np.asarray(x_init, dtype=float)
    e0 = problem.error_metric(x)
    trace = [{"epoch": 0, "error": e0}]
    meter = CostMeter()
    status, converged = "ok", True
    if target_ratio < 1 and e0 > 0:
        converged = False
        for ep in range(1, max_epochs + 1):
            try:
                res = run_epoch(problem.grad_full, problem.grad_est, x, params, rng, problem.lam_shift)
            except DivergenceError as exc:
                status = f"diverged at epoch {ep}, inner step {exc.step}"
                break
            meter.epochs += 1
            meter.inner_steps += res.steps
            meter.step_touches += res.touches
            x = res.output
            e = problem.error_metric(x)
            trace.append({"epoch": ep, "error": e})
            if not math.isfinite(e) or e > DIVERGENCE_FACTOR * e0:
                status = f"diverged at epoch {ep} (error {e:.3g})"
                break
            if e <= target_ratio * e0:
                converged = True
                break
        else:
            status = "max_epochs exhausted"
    rep = SolveReport.from_meter(meter, converged, trace=trace, status=status,
                                 final_metrics={"error_ratio": trace[-1]["error"] / e0 if e0 else 0.0},
                                 config={"eta": params.eta, "m": params.m,
                                         "sigma_sq": params.sigma_sq, "mu": params.mu})
    rep.wall_time_ms = watch.ms()
    return x, rep


# -- fast engine for samplemat systems -------------------------------------


@dataclass(frozen=True)
class QuadraticSystem:
    """``f(x) = x^T H x / 2 - rhs^T x`` with ``H = lam_shift*I + sgn*A^T A``.

    ``mu`` and ``L`` bound the spectrum of ``H`` from below and above; they
    turn gradient norms into a certified ``H``-norm error ratio.
    """

    mat: RowMatrix
    plan: Optional[SamplingPlan]
    packed: Optional[PackedPlan]
    rhs: np.ndarray
    lam_shift: float
    sgn: float
    mu: float
    L: float
    sigma_sq: float

    @property
    def nnz(self) -> int:
        return self.mat.nnz

    def hess_vec(self, x: np.ndarray) -> np.ndarray:
        out = self.sgn * self.mat.gram_matvec(x)
        if self.lam_shift:
            out = out + self.lam_shift * x
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.hess_vec(x) - self.rhs

    def with_rhs(self, rhs: np.ndarray) -> "QuadraticSystem":
        return replace(self, rhs=np.asarray(rhs, dtype=float))


class UniformStream:
    """Buffered uniforms from one generator, consumed strictly in order."""

    def __init__(self, rng: np.random.Generator, chunk: int = 1 << 16):
        self.rng = rng
        self.chunk = int(chunk)
        self.buf = np.empty(0)
        self.pos = 0

    def window(self, need: int) -> np.ndarray:
        if self.buf.size - self.pos < need:
            fresh = self.rng.random(max(self.chunk, need))
            self.buf = np.concatenate([self.buf[self.pos:], fresh])
            self.pos = 0
        return self.buf[self.pos:]

    def advance(self, k: int) -> None:
        self.pos += int(k)


def kernel_epoch(sys: QuadraticSystem, anchor: np.ndarray, w: np.ndarray,
                 params: SvrgParams, stream: UniformStream) -> EpochResult:
    pk = sys.packed
    d = anchor.size
    anchor = np.ascontiguousarray(anchor, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    v = np.zeros(d)
    acc = np.zeros(d)
    stamp = np.zeros(d)
    fstate = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    istate = np.zeros(5, dtype=np.int64)
    scratch = np.zeros(max(int(pk.c.max(initial=1)), 1), dtype=np.int64)
    while istate[K.I_STEP] < params.m:
        u = stream.window(pk.max_draws)
        used = K.epoch_chunk(
            pk.row_prob, pk.row_alias, pk.row_pinv, pk.indptr, pk.indices, pk.values,
            pk.l1_prob, pk.l1_alias, pk.l1norm, pk.c, pk.exact, pk.head_ptr, pk.head_idx,
            pk.head_val, pk.tail_ptr, pk.tail_idx, pk.tail_val, pk.tail_prob, pk.tail_alias,
            pk.tail_l2sq, pk.max_draws, anchor, w, v, acc, stamp, fstate, istate, scratch,
            params.eta, sys.lam_shift, sys.sgn, params.renorm_threshold, params.m, u)
        stream.advance(used)
        if istate[K.I_STATUS]:
            raise DivergenceError(int(istate[K.I_BAD]))
    m = params.m
    total = acc + v * (fstate[K.F_G] - stamp)
    out = total / m + (fstate[K.F_SD0] / m) * anchor + (fstate[K.F_SD1] / m) * w
    if not np.all(np.isfinite(out)):
        raise DivergenceError(m)
    return EpochResult(out, int(istate[K.I_TOUCH]), m, int(istate[K.I_RENORM]))


def reference_epoch(sys: QuadraticSystem, anchor: np.ndarray, params: SvrgParams,
                    rng: np.random.Generator, samplers) -> EpochResult:
    """Same epoch as :func:`kernel_epoch` through the Python estimators."""
    def grad_est(diff, rng):
        est = samplemat(sys.plan, samplers, diff, rng)
        return est.indices, sys.sgn * est.values, est.touch_count

    return run_epoch(sys.grad, grad_est, anchor, params, rng, sys.lam_shift)


@dataclass
class QuadOutcome:
    x: np.ndarray
    converged: bool
    status: str
    epochs: int
    grad_ratio: float
    ratio_bound: float
    trace: list = field(default_factory=list)


def rounding_floor(sys: "QuadraticSystem", x: np.ndarray) -> float:
    rhs = 0.0 if sys.rhs is None else float(np.linalg.norm(sys.rhs))
    return ROUNDING_FLOOR * (rhs + sys.L * float(np.linalg.norm(x)))


def solve_quadratic(sys: QuadraticSystem, x_init: np.ndarray, target_ratio: float,
                    max_epochs: int, stream: UniformStream, meter: CostMeter,
                    params: Optional[SvrgParams] = None) -> QuadOutcome:
    """Chain epochs until the certified ``H``-norm error ratio is below target.

    With ``g = grad f(x)``, ``||x - x*||_H^2 = g^T H^{-1} g`` lies in
    ``[||g||^2 / L, ||g||^2 / mu]``, so ``||g|| / ||g_0|| <= target*sqrt(mu/L)``
    certifies ``||x - x*||_H <= target * ||x_init - x*||_H``.
    """
    if params is None:
        params = derive_params(sys.sigma_sq, sys.mu)
    x = np.array(x_init, dtype=float)
    g = sys.grad(x)
    meter.full_pass(sys.nnz)
    g0 = float(np.linalg.norm(g))
    scale = math.sqrt(sys.mu / sys.L)
    trace = [{"epoch": 0, "grad_norm": g0}]
    if g0 == 0.0 or target_ratio >= 1.0:
        return QuadOutcome(x, True, "ok", 0, 0.0 if g0 == 0 else 1.0, 0.0, trace)
    thresh = max(target_ratio * scale * g0, rounding_floor(sys, x))
    gn = g0
    epochs = 0
    status = "max_epochs exhausted"
    while epochs < max_epochs:
        if gn <= thresh:
            status = "ok"
            break
        if sys.packed is None:
            # no sampled mass: H = lam_shift * I and one exact step lands on x*
            x = x - g / sys.lam_shift
            meter.dense_ops += x.size
        else:
            try:
                res = kernel_epoch(sys, x, g, params, stream)
            except DivergenceError as exc:
                status = f"diverged at inner step {exc.step} of epoch {epochs + 1}"
                epochs += 1
                break
            meter.inner_steps += res.steps
            meter.step_touches += res.touches
            meter.dense_ops += x.size * (1 + res.renorms)
            x = res.output
        epochs += 1
        meter.epochs += 1
        g = sys.grad(x)
        meter.full_pass(sys.nnz)
        gn = float(np.linalg.norm(g))
        trace.append({"epoch": epochs, "grad_norm": gn})
        if not math.isfinite(gn) or gn > DIVERGENCE_FACTOR * g0:
            status = f"diverged at epoch {epochs} (gradient norm {gn:.3g})"
            break
        if math.isfinite(gn):
            thresh = max(thresh, rounding_floor(sys, x))
    else:
        if gn <= thresh:
            status = "ok"
    converged = status == "ok"
    return QuadOutcome(x, converged, status, epochs, gn / g0, gn / (scale * g0), trace)


# -- catalyst outer loop --------------------------------------------------


def catalyst_inner_accuracy(lam: float, mu: float) -> float:
    """``c = 4 ((2 lam + mu) / mu)^(3/2)``: function-gap reduction each subproblem needs."""
    return 4.0 * ((2.0 * lam + mu) / mu) ** 1.5


def catalyst_solve(base: QuadraticSystem, sub: QuadraticSystem, lam: float, x_init: np.ndarray,
                   target_ratio: float, max_outer: int, max_epochs: int,
                   stream: UniformStream, meter: CostMeter, params: SvrgParams,
                   base_nnz: Optional[int] = None) -> QuadOutcome:
    """Accelerated proximal point on ``base`` with subproblems ``sub``.

    ``sub`` must have Hessian ``H_base + lam*I``; its right-hand side is set to
    ``base.rhs + lam*y`` for each prox center ``y``.  Centers follow the
    constant-momentum recursion ``y = x_k + beta (x_k - x_{k-1})`` with
    ``beta = (1 - sqrt(q)) / (1 + sqrt(q))``, ``q = mu / (mu + lam)``.  Each
    subproblem starts at its center and is solved to ``H``-norm ratio
    ``1/sqrt(c)``.  Stops on the same certified gradient test as
    :func:`solve_quadratic` applied to ``base``.
    """
    mu = base.mu
    nnz = base.nnz if base_nnz is None else base_nnz
    q = mu / (mu + lam)
    beta = (1.0 - math.sqrt(q)) / (1.0 + math.sqrt(q))
    inner = 1.0 / math.sqrt(catalyst_inner_accuracy(lam, mu))
    x_prev = np.array(x_init, dtype=float)
    x = x_prev
    y = x_prev.copy()
    g = base.grad(x)
    meter.full_pass(nnz)
    g0 = float(np.linalg.norm(g))
    scale = math.sqrt(mu / base.L)
    trace = [{"outer": 0, "grad_norm": g0}]
    if g0 == 0.0 or target_ratio >= 1.0:
        return QuadOutcome(x, True, "ok", 0, 0.0 if g0 == 0 else 1.0, 0.0, trace)
    thresh = max(target_ratio * scale * g0, rounding_floor(base, x))
    gn = g0
    status = "max_outer exhausted"
    outer = 0
    while outer < max_outer:
        outer += 1
        res = solve_quadratic(sub.with_rhs(base.rhs + lam * y), y, inner, max_epochs,
                              stream, meter, params)
        if res.status.startswith("diverged"):
            status = f"subproblem {outer}: {res.status}"
            break
        x = res.x
        y = x + beta * (x - x_prev)
        x_prev = x
        g = base.grad(x)
        meter.full_pass(nnz)
        gn = float(np.linalg.norm(g))
        trace.append({"outer": outer, "grad_norm": gn, "inner_epochs": res.epochs})
        if not math.isfinite(gn):
            status = f"diverged at outer iteration {outer}"
            break
        if gn <= thresh:
            status = "ok"
            break
    return QuadOutcome(x, status == "ok", status, outer, gn / g0, gn / (scale * g0), trace)
