from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochtransport.errors import MeshError, RangeError, StatError
from stochtransport.stochastic import (MeanAccumulator, constant_h, exponential,
                                       exponential_batch, exponential_family, ito_integral,
                                       martingale_mean, martingale_means, mesh_index, parse_h,
                                       sample_increments, sample_path, sde_residual,
                                       standard_normals,
                                       verify_bf_identity, zero_h)


class TestPaths:
    def test_reproducible_and_index_dependent(self):
        a = standard_normals(7, 0, 100)
        np.testing.assert_array_equal(a, standard_normals(7, 0, 100))
        assert not np.array_equal(a, standard_normals(7, 1, 100))
        assert not np.array_equal(a, standard_normals(8, 0, 100))

    def test_normal_moments(self):
        z = standard_normals(3, 0, 200_000)
        assert abs(z.mean()) < 0.01
        assert abs(z.var() - 1.0) < 0.01

    def test_batch_matches_single_paths(self):
        batch = sample_increments(5, 2, 1.0, 32, range(3, 6))
        for row, idx in zip(batch, range(3, 6)):
            np.testing.assert_array_equal(row, sample_path(5, 2, 1.0, 32, idx).increments)

    def test_values_are_cumulative(self):
        p = sample_path(1, 2, 1.0, 16)
        v = p.values()
        assert v.shape == (17, 2)
        np.testing.assert_array_equal(v[0], 0.0)
        np.testing.assert_allclose(v[-1], p.increments.sum(axis=0))
        assert p.dt == pytest.approx(1 / 16)

    def test_increment_variance_is_dt(self):
        incr = sample_increments(2, 1, 1.0, 64, range(2000))
        assert np.var(incr) == pytest.approx(1 / 64, rel=0.03)

    def test_off_mesh_time(self):
        assert mesh_index(0.5, 1.0, 4) == 2
        with pytest.raises(MeshError):
            mesh_index(0.3, 1.0, 4)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=300), st.integers(1, 50))
def test_accumulator_matches_numpy(values, chunk):
    x = np.array(values)
    acc = MeanAccumulator()
    for a in range(0, x.size, chunk):
        acc.add_batch(x[a:a + chunk])
    assert acc.mean == pytest.approx(x.mean(), abs=1e-9 * (1 + np.abs(x).max()))
    assert acc.variance == pytest.approx(x.var(ddof=1), rel=1e-9, abs=1e-9)


class TestHFamily:
    def test_two_dimensional_family_of_five(self):
        names = [h.name for h in exponential_family(5, 2)]
        assert names == ["zero", "const:1:0", "const:-1:0", "const:0:1", "const:0:-1"]

    def test_one_dimensional_family_of_five(self):
        names = [h.name for h in exponential_family(5, 1)]
        assert names == ["zero", "const:1", "const:-1", "step:1", "sin1:1"]

    def test_step_switches_sign(self):
        h = exponential_family(4, 1, horizon=2.0)[3]
        assert h(0.5)[0, 0] == 1.0 and h(1.5)[0, 0] == -1.0

    @pytest.mark.parametrize("text,name", [("zero", "zero"), ("const:1", "const:1:0"),
                                           ("sin2:0:1", "sin2:0:1"), ("step:1:1", "step:1:1")])
    def test_parse(self, text, name):
        assert parse_h(text, 2).name == name

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_h("cosine:1", 1)

    def test_energy(self):
        assert constant_h([3.0, 4.0]).energy(2.0, 8) == pytest.approx(50.0)


class TestExponential:
    def test_zero_h_is_one(self):
        p = sample_path(1, 2, 1.0, 64)
        assert exponential(zero_h(2), p) == 1.0

    @given(st.floats(-2, 2), st.integers(0, 1000))
    def test_constant_h_closed_form(self, c, seed):
        p = sample_path(seed, 1, 1.0, 32)
        B = p.increments.sum()
        assert exponential(constant_h(c), p) == pytest.approx(np.exp(c * B - 0.5 * c * c), rel=1e-12)
        assert ito_integral(constant_h(c), p) == pytest.approx(c * B, abs=1e-12)

    def test_overflow_guard(self):
        incr = np.full((1, 4, 1), 1.0)
        with pytest.raises(RangeError):
            exponential_batch(np.full((4, 1), 1e3), incr, 4, 0.25)

    @pytest.mark.parametrize("d", [1, 2])
    def test_mean_is_one(self, d):
        for h in exponential_family(5, d):
            rep = martingale_mean(h, 4000, 128, seed=11)
            assert rep.passed, (h.name, rep.estimate, rep.std_error)

    def test_sde_residual_shrinks_like_sqrt_dt(self):
        h = constant_h(1.0)
        r1 = sde_residual(h, 2000, 64, seed=4).rms
        r2 = sde_residual(h, 2000, 256, seed=4).rms
        assert 1.5 <= r1 / r2 <= 2.7


class TestBFIdentity:
    @pytest.mark.parametrize("Y", ["B", "sinB", "h"])
    def test_pairs_pass(self, Y):
        for h in exponential_family(3, 1):
            rep = verify_bf_identity(h, Y, 4000, 128, seed=5)
            assert rep.passed, (h.name, Y, rep.lhs, rep.rhs, rep.threshold)

    def test_deterministic_Y_uses_exact_rhs(self):
        rep = verify_bf_identity(constant_h(2.0), "h", 500, 64, T=0.5, seed=1)
        assert rep.rhs == pytest.approx(2.0) and rep.rhs_se == 0.0

    def test_needs_enough_paths(self):
        with pytest.raises(StatError):
            verify_bf_identity(zero_h(1), "B", 50)


@pytest.mark.parametrize("d", [1, 2])
def test_shared_paths_match_single_estimates(d):
    hs = exponential_family(3, d)
    joint = martingale_means(hs, 300, 32, seed=4, chunk=128)
    for h, r in zip(hs, joint):
        assert r == martingale_mean(h, 300, 32, seed=4, chunk=128)


def test_shared_paths_need_one_dimension():
    with pytest.raises(ValueError):
        martingale_means([zero_h(1), zero_h(2)], 10, 8)
