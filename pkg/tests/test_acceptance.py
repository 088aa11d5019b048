"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) and then
asserts the same verdict.
"""

import math
import time

import numpy as np
import pytest

from conftest import record
from nsls.bench import (accel_verdict, eigen_accel_arm, paired, regression_accel_arm,
                        run_eigen, run_regression, scaling_sweep, scaling_verdict)
from nsls.cli import RunConfig, run
from nsls.generator import GenSpec, generate
from nsls.oracle import (EstimatorSpec, enumerate_estimator, function_gap, monte_carlo_moments,
                         samplemat_bound, sampledot_bound, samplerankone_bound, samplevec_bound,
                         space_size, tail_bound_holds)
from nsls.regression import _build_system
from nsls.rng import make_rng
from nsls.sampling import (build_plan, build_row_sampler, build_samplers, samplemat,
                           sampledotproduct, samplerankonemat, samplevec)
from nsls.sparse_matrix import SparseRow, from_dense
from nsls.svrg import UniformStream, derive_params, kernel_epoch

ENUM_LIMIT = 100_000


def random_row(rng, d):
    vals = rng.standard_normal(d) * rng.exponential(size=d) ** 2
    keep = rng.random(d) < 0.8
    keep[rng.integers(d)] = True
    idx = np.flatnonzero(keep)
    return SparseRow.from_arrays(idx, vals[idx])


def small_instances(count, seed=0):
    """Random enumerable instances: a row sampler and a samplemat plan per draw."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        d = int(rng.integers(2, 7))
        c = int(rng.integers(1, 4))
        row = random_row(rng, d)
        s = build_row_sampler(row, c)
        x = rng.standard_normal(d)
        n = int(rng.integers(1, 4))
        A = np.array([random_row(rng, d).to_dense(d) for _ in range(n)])
        mat = from_dense(A)
        plan = build_plan(mat, float(rng.uniform(0.3, 1.5)))
        if plan.c_per_row.max() > 3:
            continue
        samplers = build_samplers(mat, plan)
        specs = {
            "samplevec": EstimatorSpec("samplevec", d, sampler=s),
            "sampledotproduct": EstimatorSpec("sampledotproduct", d, sampler=s, x=x),
            "samplerankonemat": EstimatorSpec("samplerankonemat", d, sampler=s, x=x),
            "samplemat": EstimatorSpec("samplemat", d, x=x, plan=plan, samplers=samplers),
        }
        if any(space_size(sp) > ENUM_LIMIT for sp in specs.values()):
            continue
        targets = {
            "samplevec": row.to_dense(d),
            "sampledotproduct": np.array([row.dot(x)]),
            "samplerankonemat": row.to_dense(d) * row.dot(x),
            "samplemat": mat.gram_matvec(x),
        }
        bounds = {
            "samplevec": samplevec_bound(s),
            "sampledotproduct": sampledot_bound(s, x),
            "samplerankonemat": samplerankone_bound(s, x),
            "samplemat": samplemat_bound(plan, mat, x),
        }
        # natural scale of each estimate, used when the target itself is near zero
        scales = {
            "samplevec": row.l1,
            "sampledotproduct": row.l1 * float(np.abs(x).max()),
            "samplerankonemat": row.l1 ** 2 * float(np.abs(x).max()),
            "samplemat": mat.frob_sq * float(np.abs(x).max()) * d,
        }
        out.append((specs, targets, bounds, scales))
    return out


@pytest.fixture(scope="module")
def enumerated():
    t0 = time.perf_counter()
    rows = []
    for specs, targets, bounds, scales in small_instances(60):
        rows.append({k: (enumerate_estimator(specs[k], ENUM_LIMIT), targets[k], bounds[k], scales[k])
                     for k in specs})
    return rows, time.perf_counter() - t0


def test_c1_unbiasedness_exact(enumerated):
    rows, elapsed = enumerated
    worst = 0.0
    for inst in rows:
        for en, target, _, scale in inst.values():
            denom = max(float(np.linalg.norm(target)), 1e-6 * scale)
            worst = max(worst, float(np.linalg.norm(en.mean - target)) / denom)
    ok = worst <= 1e-10 and elapsed <= 60
    record(1, "estimator unbiasedness (enumeration)", ok,
           f"{len(rows)} instances x 4 estimators, worst relative error {worst:.2e} "
           f"(tol 1e-10), {elapsed:.1f}s")
    assert ok


def _mc_cases(rng):
    d = 50
    row = random_row(rng, d)
    s = build_row_sampler(row, 3)
    x = rng.standard_normal(d)
    mat = generate(GenSpec(10, d, target_s=4.0, seed=3))
    plan = build_plan(mat, 0.5)
    samplers = build_samplers(mat, plan)
    return [
        ("samplevec", lambda g: _dense(*samplevec(s, g), d), row.to_dense(d), samplevec_bound(s)),
        ("sampledotproduct", lambda g: sampledotproduct(s, x, g), row.dot(x), sampledot_bound(s, x)),
        ("samplerankonemat", lambda g: samplerankonemat(s, x, g).to_dense(d),
         row.to_dense(d) * row.dot(x), samplerankone_bound(s, x)),
        ("samplemat", lambda g: samplemat(plan, samplers, x, g).to_dense(d),
         mat.gram_matvec(x), samplemat_bound(plan, mat, x)),
    ]


def _dense(idx, vals, d):
    out = np.zeros(d)
    np.add.at(out, idx, vals)
    return out


@pytest.mark.slow
def test_c2_second_moment_bounds(enumerated):
    rows, elapsed = enumerated
    t0 = time.perf_counter()
    exact_worst = 0.0
    exact_ok = True
    for inst in rows:
        for en, _, bound, _ in inst.values():
            exact_ok &= en.second_moment <= bound * (1 + 1e-12) + 1e-300
            if bound > 0:
                exact_worst = max(exact_worst, en.second_moment / bound)
    rng = make_rng(2)
    mc = []
    for name, est, target, bound in _mc_cases(rng):
        rep = monte_carlo_moments(est, target, bound, 100_000, rng)
        mc.append((name, rep))
    mc_ok = all(r.passed for _, r in mc)
    total = elapsed + time.perf_counter() - t0
    ok = exact_ok and mc_ok and total <= 300
    detail = ", ".join(f"{n} {r.second_moment / r.bound:.3f}" for n, r in mc)
    record(2, "second-moment bounds", ok,
           f"enumerated worst moment/bound {exact_worst:.3f}; Monte Carlo 1e5 draws d=50 "
           f"moment/bound: {detail}; {total:.0f}s")
    assert ok


def test_c3_tail_bound():
    rng = np.random.default_rng(3)
    violations = checks = 0
    for _ in range(1000):
        d = int(rng.integers(1, 65))
        vals = rng.standard_normal(d) * rng.exponential(size=d) ** rng.uniform(0, 4)
        vals[vals == 0] = 1.0
        row = SparseRow.from_arrays(np.arange(d), vals)
        for c in range(1, d + 1):
            checks += 1
            violations += not tail_bound_holds(row, c)
    ok = violations == 0
    record(3, "numerical sparsity tail bound", ok,
           f"1000 vectors (d <= 64), {checks} (vector, c) pairs, {violations} violations")
    assert ok


def test_c4_function_gap_identity():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(2, 30)), int(rng.integers(1, 10))
        n = max(n, d)
        A = rng.standard_normal((n, d))
        b, x = rng.standard_normal(n), rng.standard_normal(d)
        gap, sq = function_gap(from_dense(A), b, x)
        worst = max(worst, abs(2 * gap - sq) / sq)
    ok = worst <= 1e-10
    record(4, "function-gap identity", ok, f"100 instances, worst relative error {worst:.2e}")
    assert ok


def test_c5_epoch_contraction():
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((50, 20)) * (rng.random((50, 20)) < 0.4) * rng.exponential(size=(50, 20))
        H = A.T @ A
        ev = np.linalg.eigvalsh(H)
        mat = from_dense(A)
        b = rng.standard_normal(50)
        xs = np.linalg.solve(H, A.T @ b)
        sys = _build_system(mat, mat.rmatvec(b), ev[0], ev[-1], None, [])
        params = derive_params(sys.sigma_sq, ev[0])
        gap = lambda z: 0.5 * (z - xs) @ H @ (z - xs)
        x = rng.standard_normal(20)
        stream = UniformStream(make_rng(seed))
        for _ in range(3):
            x_new = kernel_epoch(sys, x, sys.grad(x), params, stream).output
            ratios.append(gap(x_new) / gap(x))
            x = x_new
    med = float(np.median(ratios))
    ok = med <= 0.6
    record(5, "SVRG epoch contraction", ok,
           f"20 seeds x 3 epochs on 50x20, median f-gap ratio {med:.4f}, max {max(ratios):.4f} "
           "(limit 0.6)")
    assert ok


def regression_instance(i):
    rng = np.random.default_rng(600 + i)
    d = int(rng.choice([8, 16, 32]))
    n = int(rng.integers(2 * d, 101))
    kappa = float(np.exp(rng.uniform(np.log(4 * d), np.log(1e4))))
    # singular values geometric from 1 to r, with r chosen so ||A||_F^2 / mu = kappa
    lo, hi = 1e-8, 1.0
    for _ in range(200):
        r = math.sqrt(lo * hi)
        sv = np.geomspace(1.0, r, d)
        if np.sum(sv ** 2) / r ** 2 > kappa:
            lo = r
        else:
            hi = r
    spec = GenSpec(n, d, float(rng.uniform(1.0, d / 2)), spectrum=tuple(np.geomspace(1.0, r, d)),
                   seed=i)
    return spec


def test_c6_regression_end_to_end():
    t0 = time.perf_counter()
    rows = [run_regression(regression_instance(i), 1e-4, seed=i) for i in range(20)]
    elapsed = time.perf_counter() - t0
    good = sum(r["converged"] and r["ata_ratio"] <= 1e-4 for r in rows)
    ok = good == 20 and elapsed <= 120
    record(6, "regression end-to-end", ok,
           f"{good}/20 within 1e-4 (worst ratio {max(r['ata_ratio'] for r in rows):.2e}, "
           f"kappa {min(r['kappa'] for r in rows):.0f}..{max(r['kappa'] for r in rows):.0f}), "
           f"{elapsed:.0f}s")
    assert ok


def eigen_instance(i):
    rng = np.random.default_rng(700 + i)
    d = int(rng.choice([8, 16, 32]))
    n = int(rng.integers(2 * d, 101))
    gap = float(rng.uniform(0.05, 0.5))
    tail = np.sort(rng.uniform(0.0, 1.0 - gap, d - 2))[::-1]
    ev = np.concatenate([[1.0, 1.0 - gap], tail])
    return GenSpec(n, d, float(rng.uniform(1.0, d / 2)), spectrum=tuple(np.sqrt(ev)), seed=i), gap


def test_c7_eigen_end_to_end():
    t0 = time.perf_counter()
    rows = []
    for i in range(20):
        spec, gap = eigen_instance(i)
        rows.append(run_eigen(spec, 1e-3, gap, seed=i))
    elapsed = time.perf_counter() - t0
    good = sum(r["unit_norm"] and r["quality"] >= 1 - 1e-3 for r in rows)
    ok = good >= 19 and elapsed <= 300
    record(7, "eigenvector end-to-end", ok,
           f"{good}/20 with v^T A^T A v >= (1-1e-3) lambda_1 "
           f"(worst quality {min(r['quality'] for r in rows):.6f}, gaps "
           f"{min(r['gap'] for r in rows):.3f}..{max(r['gap'] for r in rows):.3f}), {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_c8_cost_scaling():
    rows = scaling_sweep()
    v = scaling_verdict(rows)
    ok = v["within_factor_2"] and v["monotone"] and v["all_converged"]
    per = ", ".join(f"s={r['mean_s']:.1f}: {r['touches_per_step']:.0f}" for r in rows)
    totals = ", ".join(f"{r['coordinate_touches']:.2e}" for r in rows)
    record(8, "cost scaling with sqrt(s)", ok,
           f"per-step touches {per}; per-step/sqrt(s) spread {v['per_step_spread']:.2f} (limit 2); "
           f"totals {totals} monotone={v['monotone']}")
    assert ok


@pytest.mark.slow
def test_c9_acceleration():
    reg = paired(regression_accel_arm, range(10))
    vr = accel_verdict(reg, "ata_ratio", lambda r: r <= 1e-4)
    eig = paired(eigen_accel_arm, range(10))
    ve = accel_verdict(eig, "quality", lambda q: q >= 1 - 1e-3)
    ok = vr["fewer_touches"] and vr["all_accurate"] and ve["fewer_touches"] and ve["all_accurate"]
    kappas = [r["kappa"] for r in reg + eig]
    record(9, "acceleration benefit", ok,
           f"regression median touches {vr['median_plain']:.3e} -> {vr['median_accel']:.3e} "
           f"({vr['speedup']:.1f}x, accurate={vr['all_accurate']}); eigen "
           f"{ve['median_plain']:.3e} -> {ve['median_accel']:.3e} ({ve['speedup']:.1f}x, "
           f"accurate={ve['all_accurate']}); kappa >= {min(kappas):.0f}")
    assert ok


def test_c10_determinism():
    gen = {"n": 60, "d": 16, "target_s": 3.0, "decay": None, "row_norm": 1.0, "seed": 4,
           "spectrum": list(np.geomspace(1.0, 0.05, 16))}
    gapped = dict(gen, spectrum=[1.0, 0.9] + [0.5] * 14)
    configs = [
        RunConfig("solve-regression", gen=gen, epsilon=1e-5, seed=8),
        RunConfig("solve-regression", gen=gen, epsilon=1e-5, seed=8, accel=True),
        RunConfig("top-eigenvector", gen=gapped, epsilon=1e-4, gap=0.15, seed=8),
        RunConfig("top-eigenvector", gen=gapped, epsilon=1e-4, gap=0.15, seed=8, accel=True,
                  power_budget=0),
        RunConfig("verify", gen=dict(gen, n=5, d=4, spectrum=None), draws=10_000, seed=8),
    ]
    same = 0
    for cfg in configs:
        a = run(RunConfig.from_dict(cfg.to_dict()))
        b = run(RunConfig.from_dict(cfg.to_dict()))
        for out in (a[1], b[1]):
            out.pop("wall_time_ms", None)
        same += a == b
    ok = same == len(configs)
    record(10, "determinism", ok, f"{same}/{len(configs)} RunConfigs reproduce identical reports "
           "modulo wall time")
    assert ok
