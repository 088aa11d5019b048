import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nsls.report import CostMeter
from nsls.rng import make_rng
from nsls.sampling import build_plan, build_samplers, pack
from nsls.sparse_matrix import from_dense
from nsls.svrg import (ImplicitIterate, NotStronglyConvexError, QuadraticSystem, SvrgParams,
                       SvrgProblem, UniformStream, catalyst_inner_accuracy, catalyst_solve,
                       derive_params, kernel_epoch, reference_epoch, run_epoch,
                       solve_constant_factor, solve_quadratic)


def quad_1d(h=2.0, b=4.0):
    """f(x) = h x^2 / 2 - b x with an exact gradient estimator."""
    def grad_full(x):
        return h * x - b

    def grad_est(diff, rng):
        return np.array([0]), np.array([h * diff[0]]), 1

    return grad_full, grad_est


def make_system(rng, n=30, d=8, k=0.7, lam_shift=0.0, sgn=1.0):
    A = rng.standard_normal((n, d)) * rng.random((n, d)) ** 3
    mat = from_dense(A)
    plan = build_plan(mat, k)
    samplers = build_samplers(mat, plan)
    rhs = mat.rmatvec(rng.standard_normal(n))
    sys = QuadraticSystem(mat, plan, pack(plan, samplers), rhs, lam_shift, sgn, 1.0, 10.0, 10.0)
    return sys, samplers


class TestParams:
    def test_defaults(self):
        p = derive_params(10.0, 1.0)
        assert p.eta == pytest.approx(1 / 80)
        assert p.m == 640
        assert p.rate_factor == pytest.approx(0.5)

    def test_sigma_equals_mu(self):
        assert derive_params(3.0, 3.0).m == 64

    def test_rate_factor_at_most_half(self):
        for s2, mu in [(1.0, 0.3), (7.7, 0.01), (2.0, 2.0)]:
            assert derive_params(s2, mu).rate_factor <= 0.5 + 1e-12

    def test_m_one_has_no_contraction(self):
        with pytest.raises(ValueError):
            derive_params(10.0, 1.0, m=1)

    def test_step_too_large(self):
        with pytest.raises(ValueError):
            SvrgParams(eta=0.1, m=100, sigma_sq=5.0, mu=1.0)

    @pytest.mark.parametrize("mu", [0.0, -1.0])
    def test_not_strongly_convex(self, mu):
        with pytest.raises(NotStronglyConvexError):
            derive_params(1.0, mu)


class TestImplicitIterate:
    @given(st.lists(st.tuples(st.floats(0.5, 1.5), st.floats(-1, 1), st.floats(-1, 1),
                              st.integers(0, 4), st.floats(-3, 3)), min_size=1, max_size=40),
           st.floats(1e-3, 0.9))
    def test_matches_naive(self, ops, renorm):
        rng = np.random.default_rng(0)
        anchor, w = rng.standard_normal(5), rng.standard_normal(5)
        it = ImplicitIterate(anchor, w, renorm_threshold=renorm)
        x = anchor.copy()
        hist = []
        for scale, s0, s1, j, val in ops:
            it.apply(scale, s0, s1, np.array([j]), np.array([val]))
            x = scale * x + s0 * anchor + s1 * w
            x[j] += val
            it.close_step()
            hist.append(x.copy())
            assert np.allclose(it.materialize(), x, atol=1e-9 * (1 + np.abs(x).max()))
        avg = np.mean(hist, axis=0)
        assert np.allclose(it.average(), avg, atol=1e-9 * (1 + np.abs(avg).max()))

    def test_renormalize_preserves_value(self):
        it = ImplicitIterate(np.ones(3), np.arange(3.0))
        for _ in range(5):
            it.apply(0.5, 0.1, -0.2, np.array([1]), np.array([2.0]))
            it.close_step()
        before, avg = it.materialize(), it.average()
        it.renormalize()
        assert it.gamma == 1.0
        assert np.allclose(it.materialize(), before)
        assert np.allclose(it.average(), avg)

    def test_shrinking_scale_triggers_renorm(self):
        it = ImplicitIterate(np.ones(2), np.zeros(2), renorm_threshold=1e-3)
        for _ in range(20):
            it.apply(0.5, 0.0, 0.0, np.array([0]), np.array([1.0]))
            it.close_step()
        assert it.renorms > 0
        assert abs(it.gamma) >= 1e-3

    def test_zero_scale_rejected(self):
        with pytest.raises(ValueError):
            ImplicitIterate(np.ones(1), np.ones(1)).apply(0.0, 0, 0, [], [])


class TestRunEpoch:
    def test_fixed_point(self, rng):
        gf, ge = quad_1d()
        res = run_epoch(gf, ge, [2.0], derive_params(2.0, 2.0), rng)
        assert res.output == pytest.approx([2.0])

    def test_two_steps_by_hand(self, rng):
        h, b, x0 = 2.0, 4.0, 0.0
        gf, ge = quad_1d(h, b)
        # only eta and m drive the epoch; sigma_sq and mu just pass validation
        params = SvrgParams(eta=0.4, m=2, sigma_sq=0.1, mu=10.0)
        w = h * x0 - b
        x1 = x0 - 0.4 * w
        x2 = x1 - 0.4 * (h * (x1 - x0) + w)
        res = run_epoch(gf, ge, [x0], params, rng)
        assert res.output[0] == pytest.approx((x1 + x2) / 2)
        assert res.touches == 2

    def test_contracts(self, rng):
        gf, ge = quad_1d()
        params = derive_params(2.0, 2.0)
        x = np.array([10.0])
        err0 = abs(x[0] - 2.0)
        for _ in range(3):
            x = run_epoch(gf, ge, x, params, rng).output
        assert abs(x[0] - 2.0) <= err0 * 0.5 ** 3

    def test_lam_shift_part(self, rng):
        # H = 3 I + 0: the sparse estimate is empty and lam_shift carries the curvature
        def gf(x):
            return 3.0 * x - 6.0

        def ge(diff, rng):
            return np.zeros(0, dtype=np.int64), np.zeros(0), 0

        x = np.array([0.0])
        params = derive_params(3.0, 3.0)
        for _ in range(10):
            x = run_epoch(gf, ge, x, params, rng, lam_shift=3.0).output
        assert x[0] == pytest.approx(2.0, abs=1e-3)


class TestConstantFactor:
    def test_target_one_returns_immediately(self, rng):
        gf, ge = quad_1d()
        prob = SvrgProblem(gf, ge, 2.0, 2.0, lambda x: (x[0] - 2.0) ** 2)
        x, rep = solve_constant_factor(prob, [5.0], 1.0, 10, rng)
        assert rep.converged and rep.epochs == 0 and x[0] == 5.0

    def test_converges(self, rng):
        gf, ge = quad_1d()
        prob = SvrgProblem(gf, ge, 2.0, 2.0, lambda x: (x[0] - 2.0) ** 2)
        x, rep = solve_constant_factor(prob, [5.0], 1e-6, 50, rng)
        assert rep.converged
        assert (x[0] - 2.0) ** 2 <= 9e-6

    def test_understated_variance_diverges(self, rng):
        def gf(x):
            return x

        def ge(diff, g):
            return np.array([0]), np.array([diff[0] * 1e3 * g.standard_normal()]), 1

        prob = SvrgProblem(gf, ge, 1.0, 1.0, lambda x: x[0] ** 2)
        x, rep = solve_constant_factor(prob, [1.0], 1e-3, 20, rng)
        assert not rep.converged
        assert "diverged" in rep.status


class TestKernel:
    @pytest.mark.parametrize("lam_shift,sgn", [(0.0, 1.0), (50.0, -1.0)])
    def test_matches_reference(self, lam_shift, sgn):
        rng = np.random.default_rng(1)
        sys, samplers = make_system(rng, lam_shift=lam_shift, sgn=sgn)
        params = derive_params(sys.plan.M * 3, sys.plan.M * 3 * 64 / 500)
        x0 = rng.standard_normal(8)
        a = kernel_epoch(sys, x0, sys.grad(x0), params, UniformStream(make_rng(5), chunk=37))
        b = reference_epoch(sys, x0, params, make_rng(5), samplers)
        assert np.max(np.abs(a.output - b.output)) <= 1e-9 * np.max(np.abs(b.output))
        assert a.touches == b.touches
        assert a.renorms == b.renorms

    def test_solve_quadratic_certifies(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((40, 6))
        mat = from_dense(A)
        plan = build_plan(mat, 1.0)
        samplers = build_samplers(mat, plan)
        ev = np.linalg.eigvalsh(A.T @ A)
        sigma_sq = plan.M * (1 + 1.0)  # loose but valid for k = 1
        sys = QuadraticSystem(mat, plan, pack(plan, samplers), mat.rmatvec(rng.standard_normal(40)),
                              0.0, 1.0, ev[0], ev[-1], sigma_sq)
        meter = CostMeter()
        out = solve_quadratic(sys, np.zeros(6), 1e-6, 200, UniformStream(make_rng(3)), meter)
        assert out.converged
        xs = np.linalg.solve(A.T @ A, sys.rhs)
        H = A.T @ A
        err = lambda x: math.sqrt((x - xs) @ H @ (x - xs))
        assert err(out.x) <= 1e-6 * err(np.zeros(6))
        assert meter.coordinate_touches > 0

    def test_no_sampled_mass_takes_exact_step(self):
        mat = from_dense(np.zeros((1, 2)))
        sys = QuadraticSystem(mat, None, None, np.array([2.0, 4.0]), 2.0, 1.0, 2.0, 2.0, 1.0)
        out = solve_quadratic(sys, np.zeros(2), 1e-8, 5, UniformStream(make_rng(0)), CostMeter())
        assert out.converged and np.allclose(out.x, [1, 2])


class TestCatalyst:
    def test_inner_accuracy(self):
        assert catalyst_inner_accuracy(1.0, 2.0) == pytest.approx(4 * 2 ** 1.5)

    def test_matches_direct_solution(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((50, 5)) @ np.diag([1, 1, 1, 0.3, 0.05])
        mat = from_dense(A)
        H = A.T @ A
        ev = np.linalg.eigvalsh(H)
        plan = build_plan(mat, 1.0)
        pk = pack(plan, build_samplers(mat, plan))
        rhs = mat.rmatvec(rng.standard_normal(50))
        lam = 5.0
        base = QuadraticSystem(mat, plan, pk, rhs, 0.0, 1.0, ev[0], ev[-1], 2 * plan.M)
        sub = QuadraticSystem(mat, plan, pk, rhs, lam, 1.0, ev[0] + lam, ev[-1] + lam, 2 * plan.M)
        params = derive_params(sub.sigma_sq, sub.mu)
        out = catalyst_solve(base, sub, lam, np.zeros(5), 1e-6, 200, 100,
                             UniformStream(make_rng(1)), CostMeter(), params)
        assert out.converged
        xs = np.linalg.solve(H, rhs)
        err = lambda x: math.sqrt((x - xs) @ H @ (x - xs))
        assert err(out.x) <= 1e-6 * err(np.zeros(5))


class TestRegressionEpochs:
    def test_constant_factor_30x10(self):
        # target 1e-3 within 3 * ceil(log2 1e3) = 30 epochs on at least 90% of seeds
        from nsls.regression import _build_system
        from nsls.sampling import samplemat

        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            A = rng.standard_normal((30, 10))
            b = rng.standard_normal(30)
            H = A.T @ A
            ev = np.linalg.eigvalsh(H)
            xs = np.linalg.solve(H, A.T @ b)
            mat = from_dense(A)
            sys = _build_system(mat, mat.rmatvec(b), ev[0], ev[-1], None, [])
            samplers = build_samplers(mat, sys.plan)

            def grad_est(diff, g):
                est = samplemat(sys.plan, samplers, diff, g)
                return est.indices, est.values, est.touch_count

            prob = SvrgProblem(sys.grad, grad_est, sys.sigma_sq, ev[0],
                               lambda x: 0.5 * (x - xs) @ H @ (x - xs))
            _, rep = solve_constant_factor(prob, np.zeros(10), 1e-3, 30, make_rng(seed))
            hits += rep.converged
        assert hits >= 18

    def test_variance_transfer(self):
        # E||S(x - x*)||^2 <= 2 sigma^2 (f(x) - f(x*)) at five probe points
        from nsls.oracle import monte_carlo_moments
        from nsls.regression import _build_system
        from nsls.sampling import samplemat

        rng = np.random.default_rng(11)
        A = rng.standard_normal((25, 12)) * (rng.random((25, 12)) < 0.5)
        A[np.arange(12), np.arange(12)] += 2.0
        mat = from_dense(A)
        mu = float(np.linalg.eigvalsh(A.T @ A)[0])
        sys = _build_system(mat, np.zeros(12), mu, mat.norm2_upper_bound(), 1.0, [])
        samplers = build_samplers(mat, sys.plan)
        assert not sys.plan.exact_rows.all()
        for _ in range(5):
            e = rng.standard_normal(12)
            bound = sys.sigma_sq * float(np.sum((A @ e) ** 2))
            rep = monte_carlo_moments(lambda g: samplemat(sys.plan, samplers, e, g).to_dense(12),
                                      A.T @ (A @ e), bound, 10_000, rng)
            assert rep.passed

    def test_touch_audit(self):
        rng = np.random.default_rng(3)
        sys, samplers = make_system(rng)
        meter = CostMeter()
        params = derive_params(sys.plan.M * 3, sys.plan.M * 3 * 64 / 500)
        solve_quadratic(sys, np.zeros(8), 0.5, 3, UniformStream(make_rng(0)), meter, params)
        assert meter.pass_touches == 2 * sys.nnz * meter.full_passes
        assert meter.coordinate_touches == meter.step_touches + meter.pass_touches
        # per epoch: m steps of at most 1 + 4 max(c) (or 1 + 2 nnz for exact rows)
        cap = max(1 + 4 * s.c if not s.exact else 1 + 2 * s.row.nnz for s in samplers)
        assert meter.step_touches <= meter.inner_steps * cap
