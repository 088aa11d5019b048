import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nsls.generator import (GeneratorError, GenSpec, generate, max_decay, measure_family,
                            profile_sparsity, solve_decay)
from nsls.sparse_matrix import from_dense


class TestProfile:
    def test_flat_profile(self):
        assert profile_sparsity(10, 0.0) == pytest.approx(10)

    @given(st.integers(2, 500), st.floats(0, 1))
    def test_solve_decay_hits_target(self, d, frac):
        target = 1 + frac * (d - 1)
        alpha = solve_decay(d, target)
        floor = profile_sparsity(d, max_decay(d))
        assert profile_sparsity(d, alpha) == pytest.approx(max(target, floor), rel=1e-6)

    @given(st.integers(2, 200), st.floats(0, 5), st.floats(0, 5))
    def test_sparsity_decreasing_in_decay(self, d, a, b):
        lo, hi = sorted((a, b))
        assert profile_sparsity(d, hi) <= profile_sparsity(d, lo) * (1 + 1e-12)


class TestGenerate:
    def test_target_equals_d(self):
        m = generate(GenSpec(20, 8, target_s=8.0, seed=1))
        assert np.allclose(m.num_sparsity, 8.0)
        assert np.allclose(m.row_l2sq, 1.0)

    def test_near_one_hot(self):
        m = generate(GenSpec(64, 32, target_s=1.0, seed=2))
        assert m.num_sparsity.mean() <= 1.25
        # every column carries some dominant entry
        dom = np.array([r.indices[np.argmax(np.abs(r.values))] for r in m.rows])
        assert len(set(dom.tolist())) == 32

    def test_target_four(self):
        m = generate(GenSpec(128, 64, target_s=4.0, seed=3))
        assert 3.0 <= m.num_sparsity.mean() <= 5.0

    def test_rows_fully_dense(self):
        m = generate(GenSpec(10, 16, target_s=2.0, seed=4))
        assert m.nnz == 160

    def test_seed_determinism(self):
        a = generate(GenSpec(12, 6, target_s=2.0, seed=5)).to_dense()
        b = generate(GenSpec(12, 6, target_s=2.0, seed=5)).to_dense()
        c = generate(GenSpec(12, 6, target_s=2.0, seed=6)).to_dense()
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_row_norm(self):
        m = generate(GenSpec(5, 4, target_s=2.0, row_norm=3.0, seed=0))
        assert np.allclose(m.row_l2sq, 9.0)

    def test_exact_spectrum(self):
        spec = (3.0, 2.0, 1.0, 0.5)
        m = generate(GenSpec(30, 4, target_s=2.0, spectrum=spec, seed=7))
        sv = np.linalg.svd(m.to_dense(), compute_uv=False)
        assert np.allclose(sv, spec, rtol=1e-10)
        assert m.num_sparsity.mean() == pytest.approx(2.0, rel=0.25)

    @pytest.mark.parametrize("kw", [
        dict(n=0, d=3), dict(n=3, d=3, target_s=4.0), dict(n=3, d=3, target_s=0.5),
        dict(n=3, d=3, spectrum=(1.0, 1.0)), dict(n=3, d=3, spectrum=(1.0, -1.0, 1.0)),
        dict(n=3, d=3, row_norm=0.0), dict(n=3, d=3, decay=-1.0),
    ])
    def test_invalid_specs(self, kw):
        with pytest.raises(GeneratorError):
            GenSpec(**kw)

    def test_to_dict(self):
        d = GenSpec(4, 2, spectrum=[1, 2]).to_dict()
        assert d["spectrum"] == [1.0, 2.0] and d["n"] == 4


class TestMeasure:
    def test_identity(self):
        out = measure_family(from_dense(np.eye(5)))
        assert out["mean_s"] == 1.0 and out["min_s"] == 1.0
        assert out["lambda1"] == pytest.approx(1.0)
        assert out["sr"] == pytest.approx(5.0)
        assert out["kappa"] == pytest.approx(5.0)
        assert out["gap"] == pytest.approx(0.0)

    def test_diag31(self):
        out = measure_family(from_dense(np.diag([3.0, 1.0])))
        assert out["lambda1"] == pytest.approx(9)
        assert out["mu"] == pytest.approx(1)
        assert out["kappa"] == pytest.approx(10)
        assert out["gap"] == pytest.approx(8 / 9)

    def test_singular_has_infinite_kappa(self):
        assert math.isinf(measure_family(from_dense([[1.0, 1.0]]))["kappa"])

    def test_above_limit_skips_spectrum(self):
        out = measure_family(from_dense(np.eye(4)), dense_limit=4)
        assert out["lambda1"] is None and out["nnz"] == 4
