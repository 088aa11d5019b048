"""Top eigenvector of ``A^T A`` by shift-and-invert with SVRG linear solves.

Pipeline: place a shift ``lam`` slightly above ``lambda_1`` (power steps plus
Kato-Temple upper bounds, see :func:`lambda_shift_search`), then run inverse
iteration ``v <- normalize(B^{-1} v)`` with ``B = lam*I - A^T A``, each solve
done by SVRG on ``f(x) = x^T B x / 2 - v^T x`` and warm-started at
``v / (lam - rho)``.

Stopping uses the Kato-Temple bound: when every other eigenvalue is at most
``alpha`` and the Rayleigh quotient ``rho`` exceeds ``alpha``,
``lambda_1 <= rho + r^2 / (rho - alpha)`` with ``r = ||A^T A v - rho v||``.
Here ``alpha = (1 - gap) * U`` for a certified upper bound ``U >= lambda_1``.
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
from .sparse_matrix import DENSE_ORACLE_LIMIT, RowMatrix, SpectrumError, estimate_spectral
from .svrg import (ETA_CONST, M_CONST, QuadOutcome, QuadraticSystem, UniformStream,
                   catalyst_inner_accuracy, catalyst_solve, derive_params, solve_quadratic)

log = logging.getLogger(__name__)

DEFAULT_WINDOW = (0.5, 1.0)
# relative slack before a second-eigenvalue estimate counts as a gap violation
GAP_CHECK_SLACK = 1e-9
PROOF_WINDOW = (1.0 / 150.0, 1.0 / 100.0)


class ShiftError(ValueError):
    pass


@dataclass
class EigenAccelConfig:
    enabled: bool = False
    gamma_override: Optional[float] = None


@dataclass
class EigenConfig:
    """``shift_window`` gives the target shift ``lam - rho`` as multiples of ``gap * rho``."""

    epsilon: float = 1e-3
    gap_lower_bound: Optional[float] = None
    seed: Optional[int] = None
    accel: EigenAccelConfig = field(default_factory=EigenAccelConfig)
    shift_window: tuple = DEFAULT_WINDOW
    lambda1: Optional[float] = None
    solve_target: float = 0.25
    max_epochs: int = 200
    max_outer: Optional[int] = None
    max_catalyst: int = 2000
    power_budget: Optional[int] = None
    check_iters: int = 30
    eta_const: float = ETA_CONST
    m_const: float = M_CONST

    def __post_init__(self):
        if not (0 < self.epsilon < 1):
            raise ValueError("epsilon must lie in (0, 1)")
        if self.gap_lower_bound is not None and not (0 < self.gap_lower_bound < 1):
            raise ValueError("gap_lower_bound must lie in (0, 1)")
        lo, hi = self.shift_window
        if not (0 < lo < hi):
            raise ValueError("shift_window must satisfy 0 < lo < hi")
        if isinstance(self.accel, dict):
            self.accel = EigenAccelConfig(**self.accel)
        self.shift_window = (float(lo), float(hi))


# -- shifted systems ------------------------------------------------------


@dataclass(frozen=True)
class ShiftedSystem:
    """``B = lam*I - A^T A`` with its SVRG plan.

    ``lambda1_upper`` is a certified bound ``U >= lambda_1``; the strong
    convexity used for sizing is ``mu_B = lam - U``.
    """

    mat: RowMatrix
    lam: float
    lambda1_upper: float
    gap_assumed: float
    mu_B: float
    sigma_sq: float
    quad: QuadraticSystem

    @property
    def plan(self):
        return self.quad.plan


def shifted_sigma_sq(M: float, frob_sampled: float, k: float, lam: float, lam1: float,
                     mu_B: float) -> float:
    """Variance parameter for ``B = lam*I - A^T A``.

    ``E||lam*D - S(D)||^2 <= C ||D||^2`` with
    ``C = lam^2 + M ||A_s||_F^2 / k^2 + max(0, M - 2 lam) lambda_1`` and
    ``||D||^2 <= ||D||_B^2 / mu_B``.  Returns the larger of ``C / mu_B`` and
    ``4 M lambda_1 / mu_B`` (the latter is ``4M / gap`` with the gap measured
    as the relative shift).
    """
    C = lam * lam + (M * frob_sampled / (k * k) if k > 0 else 0.0) + max(0.0, M - 2.0 * lam) * lam1
    return max(C, 4.0 * M * lam1) / mu_B


def build_shifted_system(mat: RowMatrix, lam: float, lambda1_upper: float,
                         gap_assumed: float, k: Optional[float] = None) -> ShiftedSystem:
    mu_B = lam - lambda1_upper
    if not (mu_B > 0):
        raise ShiftError(f"shift {lam:.6g} does not exceed the lambda_1 bound {lambda1_upper:.6g}; "
                         "B is not certified positive definite")
    d = mat.n_cols
    if mat.frob_sq > 0:
        if k is None:
            sr = mat.frob_sq / lambda1_upper if lambda1_upper > 0 else 1.0
            k = math.sqrt(max(sr, 1.0))
        plan = build_plan(mat, k)
        sigma_sq = shifted_sigma_sq(plan.M, plan.frob_sampled, plan.k, lam, lambda1_upper, mu_B)
        plan = plan.with_sigma_sq(sigma_sq)
        packed = pack(plan, build_samplers(mat, plan))
    else:
        plan, packed = None, None
        sigma_sq = lam * lam / mu_B
    quad = QuadraticSystem(mat, plan, packed, np.zeros(d), lam, -1.0, mu_B, lam, sigma_sq)
    return ShiftedSystem(mat, lam, lambda1_upper, gap_assumed, mu_B, sigma_sq, quad)


def solve_shifted_system(sys: ShiftedSystem, rhs, x_init, target_ratio: float,
                         rng: np.random.Generator, meter: Optional[CostMeter] = None,
                         max_epochs: int = 200, stream: Optional[UniformStream] = None,
                         eta_const: float = ETA_CONST, m_const: float = M_CONST
                         ) -> tuple[np.ndarray, QuadOutcome]:
    """SVRG on ``x^T B x / 2 - rhs^T x`` to certified ``B``-norm ratio ``target_ratio``."""
    meter = CostMeter() if meter is None else meter
    stream = UniformStream(rng) if stream is None else stream
    q = sys.quad.with_rhs(np.asarray(rhs, dtype=float))
    params = derive_params(q.sigma_sq, q.mu, eta_const=eta_const, m_const=m_const)
    out = solve_quadratic(q, np.asarray(x_init, dtype=float), target_ratio, max_epochs,
                          stream, meter, params)
    return out.x, out


# -- spectral helpers -----------------------------------------------------


def _fix_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def _rayleigh(mat: RowMatrix, v: np.ndarray, meter: CostMeter) -> tuple[np.ndarray, float, float]:
    u = mat.gram_matvec(v)
    meter.full_pass(mat.nnz)
    rho = float(v @ u)
    r = float(np.linalg.norm(u - rho * v))
    return u, rho, r


def kato_temple_upper(rho: float, r: float, U: float, gap: float, rounds: int = 4) -> float:
    """Tighten ``U >= lambda_1`` given ``lambda_2 <= (1 - gap) * U``."""
    for _ in range(rounds):
        alpha = (1.0 - gap) * U
        if rho <= alpha:
            break
        new = rho + r * r / (rho - alpha)
        if new >= U:
            break
        U = new
    return max(U, rho)


def certified_quality(rho: float, r: float, U: float, gap: float, eps: float) -> bool:
    """``rho >= (1 - eps) * lambda_1`` certified by Kato-Temple."""
    alpha = (1.0 - gap) * U
    if rho <= alpha:
        return False
    return eps * rho >= (1.0 - eps) * r * r / (rho - alpha)


def second_eigenvalue_estimate(mat: RowMatrix, v: np.ndarray, iters: int,
                               rng: np.random.Generator, meter: CostMeter,
                               stop_above: Optional[float] = None) -> float:
    """Power iteration on ``A^T A`` restricted to the complement of ``v``."""
    d = mat.n_cols
    if d == 1:
        return 0.0
    z = rng.standard_normal(d)
    z -= (z @ v) * v
    nz = np.linalg.norm(z)
    if nz == 0:
        return 0.0
    z /= nz
    best = 0.0
    for _ in range(iters):
        u = mat.gram_matvec(z)
        meter.full_pass(mat.nnz)
        u -= (u @ v) * v
        best = max(best, float(z @ u))
        if stop_above is not None and best > stop_above:
            break
        nu = np.linalg.norm(u)
        if nu == 0:
            break
        z = u / nu
    return best


def gap_violated(lam2: float, rho: float, U: float, gap: float) -> bool:
    """True when ``lambda_2 > (1 - gap) lambda_1`` is certain.

    For a unit ``z`` orthogonal to ``v`` the Rayleigh quotient is at most
    ``lambda_2 + (lambda_1 - rho)``, so ``lambda_2 >= lam2 - (U - rho)``.
    """
    return lam2 - max(U - rho, 0.0) > (1.0 - gap) * U * (1.0 + GAP_CHECK_SLACK)


@dataclass
class ShiftResult:
    lam: float
    lambda1_upper: float
    rho: float
    v: Optional[np.ndarray]
    in_window: bool
    power_iters: int
    warnings: list = field(default_factory=list)


def trusted_power_steps(d: int, gap: float) -> int:
    """Power steps after which a random start is within 45 degrees of the top eigenvector.

    From a Gaussian start ``tan(theta_0)`` is below ``100 sqrt(d)`` except with
    probability about 1%, and each step multiplies it by at most ``1 - gap``.
    """
    return int(math.ceil(math.log(100.0 * math.sqrt(d)) / -math.log1p(-gap)))


def lambda_shift_search(mat: RowMatrix, gap_lower_bound: float, rng: np.random.Generator,
                        window: tuple = DEFAULT_WINDOW, lambda1: Optional[float] = None,
                        meter: Optional[CostMeter] = None, budget: Optional[int] = None,
                        check_iters: int = 30, v0: Optional[np.ndarray] = None,
                        min_trusted: Optional[int] = None) -> ShiftResult:
    """Place ``lam`` so ``(1 + lo*g) rho <= lam <= (1 + hi*g) rho`` with ``lam`` above ``lambda_1``.

    Starts at ``lam = (1 + hi*g) * U`` with ``U = min(||A||_F^2, ||A||_1 ||A||_inf)``
    and halves ``lam - rho`` after power steps, but only while the upper bound
    ``U`` keeps ``lam - U >= (lam - rho) / 2``.  Once enough power steps have
    run (:func:`trusted_power_steps`) the eigenvalue within ``r`` of ``rho`` is
    taken to be ``lambda_1`` and ``U`` is tightened by Kato-Temple, which also
    assumes ``lambda_2 <= (1 - g) lambda_1``.  A deflated power check
    afterwards flags instances that violate the gap assumption.
    """
    if not (0 < gap_lower_bound < 1):
        raise ValueError("gap_lower_bound must lie in (0, 1)")
    meter = CostMeter() if meter is None else meter
    g = gap_lower_bound
    lo, hi = window
    warnings: list = []
    if lambda1 is not None:
        lam = (1.0 + 0.5 * (lo + hi) * g) * lambda1
        return ShiftResult(lam, float(lambda1), float(lambda1), None, True, 0, warnings)
    d = mat.n_cols
    if budget is None:
        budget = 20 * trusted_power_steps(d, g) + 50
    if min_trusted is None:
        min_trusted = trusted_power_steps(d, g)
    U = mat.norm2_upper_bound()
    v = rng.standard_normal(d) if v0 is None else np.array(v0, dtype=float)
    v /= np.linalg.norm(v)
    lam = (1.0 + hi * g) * U
    u, rho, r = _rayleigh(mat, v, meter)
    it = 0
    in_window = False
    while True:
        U = kato_temple_upper(rho, r, U, g)
        if it >= min_trusted:
            U = min(U, kato_temple_upper(rho, r, rho + r, g))
        while lam - rho > hi * g * rho:
            cand = rho + 0.5 * (lam - rho)
            if U > 0.5 * (cand + rho):
                break
            lam = cand
        lam = max(lam, (1.0 + lo * g) * rho)
        if lam <= (1.0 + hi * g) * rho and U <= 0.5 * (lam + rho):
            in_window = True
            break
        if it >= budget:
            break
        nu = np.linalg.norm(u)
        if nu == 0:
            break
        v = u / nu
        u, rho, r = _rayleigh(mat, v, meter)
        it += 1
    if not in_window:
        warnings.append(f"shift window not reached after {it} power steps; "
                        f"using lam={lam:.6g} (rho={rho:.6g}, U={U:.6g})")
    lam2 = second_eigenvalue_estimate(mat, v, check_iters, rng, meter,
                                      stop_above=(1.0 - g) * U * (1.0 + GAP_CHECK_SLACK) + U - rho)
    if gap_violated(lam2, rho, U, g):
        warnings.append(f"gap lower bound {g:.3g} appears violated: second eigenvalue "
                        f"estimate {lam2:.6g} exceeds (1-gap)*rho = {(1 - g) * rho:.6g}")
    return ShiftResult(lam, U, rho, _fix_sign(v), in_window, it, warnings)


def balancing_gamma(mat: RowMatrix, lambda1: float) -> float:
    """``sqrt((2 lambda_1 / nnz) * sum_i ||a_i||^2 (sqrt(s_i) + sqrt(sr)) sqrt(s_i))``."""
    sr = mat.frob_sq / lambda1
    s = mat.num_sparsity
    w = float(np.sum(mat.row_l2sq * (np.sqrt(s) + math.sqrt(sr)) * np.sqrt(s)))
    return math.sqrt(2.0 * lambda1 / mat.nnz * w)


def outer_budget(d: int, gap: float, eps: float) -> int:
    """``ceil(log^2(d/gap)) + ceil(log(1/eps))`` inverse-iteration steps."""
    return int(math.ceil(math.log(d / gap) ** 2) + math.ceil(math.log(1.0 / eps)))


# -- main solver ----------------------------------------------------------


def _resolve_gap(mat: RowMatrix, cfg: EigenConfig, warnings: list) -> float:
    if cfg.gap_lower_bound is not None:
        return float(cfg.gap_lower_bound)
    if mat.n_rows * mat.n_cols > DENSE_ORACLE_LIMIT:
        raise ValueError("gap_lower_bound is required above desk scale")
    stats = estimate_spectral(mat, power_iters=1)
    if not stats.gap_est or stats.gap_est <= 0:
        raise ValueError("gap_lower_bound not given and the estimated gap is zero")
    g = min(0.5 * stats.gap_est, 0.5)
    warnings.append(f"gap_lower_bound not given; using half the estimated gap, {g:.4g}")
    return g


def top_eigenvector(mat: RowMatrix, cfg: EigenConfig,
                    rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, SolveReport]:
    """Unit ``v`` with ``v^T A^T A v >= (1 - eps) lambda_1`` (inverse iteration + SVRG)."""
    return _top_eigenvector(mat, cfg, rng, accelerated=cfg.accel.enabled)


def top_eigenvector_accelerated(mat: RowMatrix, cfg: EigenConfig,
                                rng: Optional[np.random.Generator] = None
                                ) -> tuple[np.ndarray, SolveReport]:
    """As :func:`top_eigenvector` with each ``B`` solve wrapped in a catalyst loop over ``B + gamma I``."""
    return _top_eigenvector(mat, cfg, rng, accelerated=True)


def _top_eigenvector(mat: RowMatrix, cfg: EigenConfig, rng, accelerated: bool):
    watch = Stopwatch()
    if mat.frob_sq == 0:
        raise SpectrumError("spectrum undefined for zero matrix")
    rng = make_rng(cfg.seed) if rng is None else rng
    meter = CostMeter()
    warnings: list = []
    d = mat.n_cols
    echo = asdict(cfg)
    echo["accelerated"] = accelerated

    if d == 1:
        v = np.ones(1)
        _, rho, r = _rayleigh(mat, v, meter)
        rep = SolveReport.from_meter(meter, True, config=echo,
                                     final_metrics={"rayleigh_quotient": rho, "residual_norm": r})
        rep.wall_time_ms = watch.ms()
        return v, rep

    g = _resolve_gap(mat, cfg, warnings)
    shift = lambda_shift_search(mat, g, rng, cfg.shift_window, cfg.lambda1, meter,
                                cfg.power_budget, cfg.check_iters)
    warnings.extend(shift.warnings)
    stream = UniformStream(rng)

    def setup(shift):
        lam, U = shift.lam, shift.lambda1_upper
        sys = build_shifted_system(mat, lam, U, g)
        params = derive_params(sys.sigma_sq, sys.mu_B, eta_const=cfg.eta_const,
                               m_const=cfg.m_const)
        gamma = sub = sub_params = None
        if accelerated:
            floor = 2.0 * (lam - shift.rho)
            if cfg.accel.gamma_override is not None:
                gamma = float(cfg.accel.gamma_override)
            else:
                gamma = balancing_gamma(mat, U)
            if gamma < floor:
                warnings.append(f"gamma {gamma:.4g} raised to 2*(lam - rho) = {floor:.4g}")
                gamma = floor
            sub = build_shifted_system(mat, lam + gamma, U, g)
            sub_params = derive_params(sub.sigma_sq, sub.mu_B, eta_const=cfg.eta_const,
                                       m_const=cfg.m_const)
        return lam, U, sys, params, gamma, sub, sub_params

    lam, U, sys, params, gamma, sub, sub_params = setup(shift)
    researches = 0
    reshifts = 0
    outer_at_shift = 0
    trusted = trusted_power_steps(d, g)

    v = shift.v if shift.v is not None else _fix_sign(rng.standard_normal(d))
    v = v / np.linalg.norm(v)
    _, rho, r = _rayleigh(mat, v, meter)
    U = kato_temple_upper(rho, r, U, g)
    budget = outer_budget(d, g, cfg.epsilon)
    max_outer = cfg.max_outer if cfg.max_outer is not None else 10 * budget
    trace = [{"outer": 0, "rayleigh_quotient": rho, "residual": r, "lambda1_upper": U}]
    history = [rho]
    converged = False
    status = "outer budget exhausted"
    outer = 0
    while outer < max_outer:
        if certified_quality(rho, r, U, g, cfg.epsilon):
            converged = True
            status = "ok"
            break
        if len(history) > 3 and history[-1] - history[-4] <= 1e-13 * abs(history[-1]):
            status = "rayleigh quotient stagnated over 3 outer iterations (gap likely overestimated)"
            break
        outer += 1
        x0 = v / max(lam - rho, sys.mu_B)
        if accelerated:
            base = sys.quad.with_rhs(v)
            out = catalyst_solve(base, sub.quad, gamma, x0, cfg.solve_target, cfg.max_catalyst,
                                 cfg.max_epochs, stream, meter, sub_params)
        else:
            q = sys.quad.with_rhs(v)
            out = solve_quadratic(q, x0, cfg.solve_target, cfg.max_epochs, stream, meter, params)
        failed = "diverged" in out.status
        nx = np.linalg.norm(out.x)
        if not failed and np.isfinite(nx) and nx > 0:
            v_new = _fix_sign(out.x / nx)
            _, rho_new, r_new = _rayleigh(mat, v_new, meter)
        if failed or not np.isfinite(nx) or nx == 0 or rho_new > U * (1.0 + 1e-12):
            # the lambda_1 bound was wrong (B indefinite); redo the shift
            # search from the current vector with more trusted power steps
            if cfg.lambda1 is not None or researches >= 3:
                status = f"linear solve failed at outer iteration {outer}: {out.status}"
                break
            researches += 1
            trusted *= 4
            warnings.append(f"lambda_1 bound {U:.6g} violated at outer iteration {outer}; "
                            "repeating the shift search")
            shift = lambda_shift_search(mat, g, rng, cfg.shift_window, None, meter,
                                        cfg.power_budget, cfg.check_iters, v0=v,
                                        min_trusted=trusted)
            lam, U, sys, params, gamma, sub, sub_params = setup(shift)
            outer_at_shift = outer
            v = shift.v
            _, rho, r = _rayleigh(mat, v, meter)
            history = [rho]
            continue
        v, rho, r = v_new, rho_new, r_new
        U = kato_temple_upper(rho, r, U, g)
        if shift.power_iters + outer - outer_at_shift >= trusted:
            # inverse iteration contracts at least as fast as a power step
            U = min(U, kato_temple_upper(rho, r, rho + r, g))
        lo_w, hi_w = cfg.shift_window
        lam_c = max((1.0 + hi_w * g) * rho, 2.0 * U - rho)
        if cfg.lambda1 is None and lam_c - rho <= 0.5 * (lam - rho):
            # the tighter bound lets the shift move closer to lambda_1
            in_win = lam_c <= (1.0 + hi_w * g) * rho * (1.0 + 1e-12)
            shift = ShiftResult(lam_c, U, rho, v, in_win, shift.power_iters, [])
            lam, U, sys, params, gamma, sub, sub_params = setup(shift)
            reshifts += 1
        history.append(rho)
        trace.append({"outer": outer, "rayleigh_quotient": rho, "residual": r,
                      "lambda1_upper": U, "solve_epochs": out.epochs})
    else:
        if certified_quality(rho, r, U, g, cfg.epsilon):
            converged, status = True, "ok"

    if converged:
        lam2 = second_eigenvalue_estimate(
            mat, v, cfg.check_iters, rng, meter,
            stop_above=(1.0 - g) * U * (1.0 + GAP_CHECK_SLACK) + U - rho)
        if gap_violated(lam2, rho, U, g):
            converged = False
            status = "gap assumption violated"
            warnings.append(f"second eigenvalue estimate {lam2:.6g} exceeds (1-gap)*rho; "
                            "the top eigenvalue may not be separated")
    if not converged and status not in warnings:
        warnings.append(status)
    v = v / np.linalg.norm(v)
    metrics = {"rayleigh_quotient": rho, "residual_norm": r, "lambda1_upper": U,
               "certified_ratio": rho / U if U > 0 else 1.0, "outer_iterations": outer,
               "shift": lam, "shift_in_window": shift.in_window}
    cfg_echo = dict(echo, gap_used=g, lam=lam, mu_B=sys.mu_B, sigma_sq=sys.sigma_sq,
                    eta=params.eta, m=params.m, outer_budget=budget,
                    k=sys.plan.k if sys.plan is not None else None,
                    shift_power_iters=shift.power_iters, reshifts=reshifts,
                    shift_researches=researches)
    if accelerated:
        cfg_echo.update(gamma=gamma, sub_m=sub_params.m,
                        inner_accuracy_c=catalyst_inner_accuracy(gamma, sys.mu_B))
    rep = SolveReport.from_meter(meter, converged, final_metrics=metrics,
                                 clamps_and_warnings=warnings, trace=trace, status=status,
                                 config=cfg_echo)
    rep.wall_time_ms = watch.ms()
    return v, rep
