"""Least-squares regression ``min ||Ax - b||^2 / 2`` with subsampled SVRG.

The plan uses ``k = sqrt(kappa)`` with ``kappa = ||A||_F^2 / mu``.  The
variance parameter is ``sigma^2 = M (1 + ||A_sampled||_F^2 / (k^2 mu))``,
which is ``2M`` when every row is subsampled and ``M`` when every row is
exact.  The accelerated variant wraps the same solver in a catalyst loop over
ridge-augmented subproblems.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .report import CostMeter, SolveReport, Stopwatch
from .rng import make_rng
from .sampling import build_plan, build_samplers, pack
from .sparse_matrix import RowMatrix, augment_ridge
from .svrg import (ETA_CONST, M_CONST, DivergenceError, NotStronglyConvexError, QuadraticSystem,
                   UniformStream, catalyst_inner_accuracy, catalyst_solve, derive_params,
                   kernel_epoch, solve_quadratic)

log = logging.getLogger(__name__)


class SingularMatrixError(ValueError):
    pass


@dataclass
class RegressionProblem:
    mat: RowMatrix
    b: np.ndarray
    mu: Optional[float] = None
    x_init: Optional[np.ndarray] = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if self.b.shape != (self.mat.n_rows,):
            raise ValueError(f"b has length {self.b.size}, expected {self.mat.n_rows}")
        if self.x_init is None:
            self.x_init = np.zeros(self.mat.n_cols)
        self.x_init = np.asarray(self.x_init, dtype=float)
        if self.x_init.shape != (self.mat.n_cols,):
            raise ValueError("x_init has the wrong length")
        self.atb = self.mat.rmatvec(self.b)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.mat.gram_matvec(x) - self.atb

    def objective(self, x: np.ndarray) -> float:
        r = self.mat.matvec(x) - self.b
        return 0.5 * float(r @ r)


@dataclass
class AccelConfig:
    enabled: bool = False
    lam_override: Optional[float] = None


@dataclass
class RegressionConfig:
    epsilon: float = 1e-6
    k_override: Optional[float] = None
    seed: Optional[int] = None
    max_epochs: int = 400
    lambda1: Optional[float] = None
    accel: AccelConfig = field(default_factory=AccelConfig)
    eta_const: float = ETA_CONST
    m_const: float = M_CONST
    max_outer: int = 2000

    def __post_init__(self):
        if not (0 < self.epsilon < 1):
            raise ValueError("epsilon must lie in (0, 1)")
        if isinstance(self.accel, dict):
            self.accel = AccelConfig(**self.accel)


def regression_sigma_sq(plan, mu: float) -> float:
    return plan.M * (1.0 + plan.frob_sampled / (plan.k ** 2 * mu))


def _build_system(mat: RowMatrix, rhs: np.ndarray, mu: float, lam1_ub: float,
                  k: Optional[float], warnings: list) -> QuadraticSystem:
    kappa = mat.frob_sq / mu
    d = mat.n_cols
    force = False
    if k is None:
        k = math.sqrt(kappa)
        if kappa > d * d:
            force = True
            warnings.append(f"kappa={kappa:.3g} exceeds d^2={d * d}; sampling every row exactly")
            log.warning(warnings[-1])
    plan = build_plan(mat, k, force_exact=force)
    sigma_sq = regression_sigma_sq(plan, mu)
    plan = plan.with_sigma_sq(sigma_sq)
    packed = pack(plan, build_samplers(mat, plan))
    return QuadraticSystem(mat, plan, packed, rhs, 0.0, 1.0, mu, max(lam1_ub, mu), sigma_sq)


def _lambda1_upper(mat: RowMatrix, cfg: RegressionConfig) -> float:
    ub = mat.norm2_upper_bound()
    if cfg.lambda1 is not None:
        ub = min(ub, float(cfg.lambda1))
    return ub


def _check_mu(prob: RegressionProblem) -> float:
    mu = prob.mu
    if mu is None or not (mu > 0):
        raise NotStronglyConvexError("regression needs mu > 0 (A^T A must be nonsingular)")
    if prob.mat.frob_sq == 0:
        raise NotStronglyConvexError("zero matrix is not strongly convex")
    return float(mu)


def _config_echo(cfg: RegressionConfig, **extra) -> dict:
    out = asdict(cfg)
    out.update(extra)
    return out


def solve_regression(prob: RegressionProblem, cfg: RegressionConfig,
                     rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, SolveReport]:
    """SVRG to ``||x - x*||_{A^T A} <= eps * ||x_init - x*||_{A^T A}``."""
    watch = Stopwatch()
    mu = _check_mu(prob)
    rng = make_rng(cfg.seed) if rng is None else rng
    warnings: list = []
    lam1_ub = _lambda1_upper(prob.mat, cfg)
    sys = _build_system(prob.mat, prob.atb, mu, lam1_ub, cfg.k_override, warnings)
    params = derive_params(sys.sigma_sq, mu, eta_const=cfg.eta_const, m_const=cfg.m_const)
    meter = CostMeter()
    out = solve_quadratic(sys, prob.x_init, cfg.epsilon, cfg.max_epochs, UniformStream(rng),
                          meter, params)
    if not out.converged:
        warnings.append(out.status)
    x = out.x
    metrics = _final_metrics(prob, x, out.grad_ratio, out.ratio_bound)
    rep = SolveReport.from_meter(
        meter, out.converged, final_metrics=metrics, clamps_and_warnings=warnings,
        trace=out.trace, status=out.status,
        config=_config_echo(cfg, mu=mu, k=sys.plan.k, sigma_sq=sys.sigma_sq, M=sys.plan.M,
                            eta=params.eta, m=params.m, lambda1_upper=lam1_ub,
                            exact_rows=int(sys.plan.exact_rows.sum()),
                            accelerated=False))
    rep.wall_time_ms = watch.ms()
    return x, rep


def _final_metrics(prob: RegressionProblem, x: np.ndarray, grad_ratio: float,
                   ratio_bound: float) -> dict:
    r = prob.mat.matvec(x) - prob.b
    return {"grad_norm_ratio": grad_ratio,
            "certified_ata_ratio_bound": ratio_bound,
            "residual_norm": float(np.linalg.norm(r)),
            "x_norm": float(np.linalg.norm(x))}


def balancing_lambda(mat: RowMatrix) -> float:
    """``((||A||_F / nnz) * sum_i ||a_i||^2 sqrt(s_i))^(2/3)``."""
    w = float(np.sum(mat.row_l2sq * np.sqrt(mat.num_sparsity)))
    return (math.sqrt(mat.frob_sq) / mat.nnz * w) ** (2.0 / 3.0)


def solve_regression_accelerated(prob: RegressionProblem, cfg: RegressionConfig,
                                 rng: Optional[np.random.Generator] = None
                                 ) -> tuple[np.ndarray, SolveReport]:
    """Catalyst outer loop over ``min f(x) + lam/2 ||x - y||^2`` subproblems.

    Each subproblem is the regression on ``[A; sqrt(lam) I]`` with right-hand
    side ``[b; sqrt(lam) y]``; only ``A~^T b~ = A^T b + lam y`` changes between
    subproblems, so one sampling plan serves them all.
    """
    watch = Stopwatch()
    mu = _check_mu(prob)
    mat = prob.mat
    d = mat.n_cols
    rng = make_rng(cfg.seed) if rng is None else rng
    warnings: list = []
    if cfg.accel.lam_override is not None:
        lam = float(cfg.accel.lam_override)
        source = "override"
    else:
        lam = balancing_lambda(mat)
        source = "balancing"
        cap = mat.frob_sq / d
        if lam > cap:
            warnings.append(f"balancing lambda {lam:.4g} clamped to ||A||_F^2/d = {cap:.4g}")
            lam = cap
    if lam < 2.0 * mu:
        if source == "override":
            warnings.append(f"lambda {lam:.4g} raised to 2*mu = {2 * mu:.4g}")
            lam = 2.0 * mu
        else:
            x, rep = solve_regression(prob, cfg, rng)
            rep.clamps_and_warnings.insert(
                0, f"lambda {lam:.4g} < 2*mu = {2 * mu:.4g}; acceleration not beneficial, "
                   "solved without it")
            rep.config["accelerated"] = False
            return x, rep

    lam1_ub = _lambda1_upper(mat, cfg)
    aug, _ = augment_ridge(mat, np.zeros(mat.n_rows), lam, np.zeros(d))
    mu_sub = mu + lam
    sub = _build_system(aug, prob.atb, mu_sub, lam1_ub + lam, cfg.k_override, warnings)
    params = derive_params(sub.sigma_sq, mu_sub, eta_const=cfg.eta_const, m_const=cfg.m_const)
    base = QuadraticSystem(mat, None, None, prob.atb, 0.0, 1.0, mu, max(lam1_ub, mu), 0.0)
    meter = CostMeter()
    out = catalyst_solve(base, sub, lam, prob.x_init, cfg.epsilon, cfg.max_outer,
                         cfg.max_epochs, UniformStream(rng), meter, params)
    if not out.converged:
        warnings.append(out.status)
    x = out.x
    q = mu / (mu + lam)
    metrics = _final_metrics(prob, x, out.grad_ratio, out.ratio_bound)
    metrics["outer_iterations"] = out.epochs
    rep = SolveReport.from_meter(
        meter, out.converged, final_metrics=metrics, clamps_and_warnings=warnings,
        trace=out.trace, status=out.status,
        config=_config_echo(cfg, mu=mu, lam=lam, lam_source=source,
                            inner_accuracy_c=catalyst_inner_accuracy(lam, mu),
                            momentum=(1 - math.sqrt(q)) / (1 + math.sqrt(q)),
                            k=sub.plan.k, sigma_sq=sub.sigma_sq, M=sub.plan.M,
                            eta=params.eta, m=params.m, lambda1_upper=lam1_ub,
                            accelerated=True))
    rep.wall_time_ms = watch.ms()
    return x, rep


def solve(prob: RegressionProblem, cfg: RegressionConfig,
          rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, SolveReport]:
    if cfg.accel.enabled:
        return solve_regression_accelerated(prob, cfg, rng)
    return solve_regression(prob, cfg, rng)


# -- strong convexity search ----------------------------------------------


@dataclass
class MuSearchResult:
    mu: float
    candidates: list
    ratios: list
    steps: int


def mu_search(prob: RegressionProblem, cfg: Optional[RegressionConfig] = None,
              mu_lo: Optional[float] = None, mu_hi: Optional[float] = None,
              accept_ratio: float = 0.22, step_budget: int = 20_000_000,
              rng: Optional[np.random.Generator] = None) -> MuSearchResult:
    """Largest ``mu`` on a halving grid for which SVRG sized with it contracts.

    Each candidate runs a warm-up epoch and a probe epoch on the homogeneous
    problem (``b = 0``, so ``x* = 0``) from a random start; it is accepted when
    the probe epoch shrinks ``||x||`` by at least ``accept_ratio``.  If the
    candidate overstates ``mu``, the epoch is too short for the slowest
    direction and the shrinkage of that direction is only about
    ``(1 - exp(-8 mu/cand)) / (8 mu/cand)``; 0.22 accepts candidates up to
    roughly ``1.8 mu``.
    """
    cfg = cfg or RegressionConfig()
    mat = prob.mat
    if mat.frob_sq == 0:
        raise SingularMatrixError("matrix appears singular")
    rng = make_rng(cfg.seed) if rng is None else rng
    mu_hi = mat.frob_sq if mu_hi is None else float(mu_hi)
    mu_lo = mu_hi * 1e-12 if mu_lo is None else float(mu_lo)
    lam1_ub = _lambda1_upper(mat, cfg)
    stream = UniformStream(rng)
    zero = np.zeros(mat.n_cols)
    cands, ratios = [], []
    steps = 0
    cand = mu_hi
    while cand >= mu_lo:
        sys = _build_system(mat, zero, cand, lam1_ub, None, [])
        params = derive_params(sys.sigma_sq, cand, eta_const=cfg.eta_const, m_const=cfg.m_const)
        if steps + 2 * params.m > step_budget:
            break
        x = rng.standard_normal(mat.n_cols)
        norms = [float(np.linalg.norm(x))]
        ok = True
        for _ in range(2):
            try:
                x = kernel_epoch(sys, x, sys.grad(x), params, stream).output
            except DivergenceError:
                ok = False
                break
            norms.append(float(np.linalg.norm(x)))
        steps += 2 * params.m
        ratio = norms[2] / norms[1] if ok and norms[1] > 0 else math.inf
        cands.append(cand)
        ratios.append(ratio)
        if ratio <= accept_ratio:
            return MuSearchResult(cand, cands, ratios, steps)
        cand /= 2.0
    raise SingularMatrixError("matrix appears singular")
