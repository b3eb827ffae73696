from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochtransport.errors import ConditionError, ConfigError, DomainError, EllipticError
from stochtransport.fields import BOX, GridSpec, ScalarField, VectorField
from stochtransport.muskat import (FaceVelocity, Mobility, MuskatConfig, darcy_solve, face_drift,
                                   face_layout, fixed_point_iterate, layered_phase,
                                   mobility_expectation, preset, smooth_step, transport_phase)
from stochtransport.stochastic import sample_path


def box(n=16):
    return GridSpec(2, 1.0, n, BOX)


def small_config(**kw):
    g = box(16)
    base = dict(grid=g, sigma=0.1, mobility=Mobility(0.5, 1.0), gravity=(0.0, -1.0),
                rho0=layered_phase(g, 1.0, 2.0, amplitude=0.2), nu0=layered_phase(g, 1.0, 1.5),
                T=0.5, N=4, n_paths=6, max_iterations=4)
    base.update(kw)
    return MuskatConfig(**base)


class TestMobility:
    def test_affine(self):
        mob = Mobility(0.5, 2.0)
        np.testing.assert_allclose(mob(0.0, None, np.array([0.0, 1.0])), [0.5, 2.5])
        assert mob.label == "0.5+2*m"
        assert Mobility(1.0, 0.0).label == "1"

    @pytest.mark.parametrize("h0,slope", [(0.0, 1.0), (-1.0, 1.0), (1.0, -0.5), (np.inf, 0.0)])
    def test_invalid(self, h0, slope):
        with pytest.raises(ConfigError):
            Mobility(h0, slope)

    def test_expectation_of_constant_phases(self):
        g = box(8)
        rho = np.full((3, g.size), 2.0)
        nu = np.full((3, g.size), 1.5)
        H = mobility_expectation(rho, nu, 0.0, g, Mobility(0.5))
        np.testing.assert_allclose(H.values, 3.5)

    @given(st.lists(st.floats(0.0, 4.0), min_size=2, max_size=8))
    def test_expectation_is_path_average(self, ms):
        g = box(4)
        rho = np.array([np.full(g.size, m) for m in ms])
        nu = np.ones_like(rho)
        H = mobility_expectation(rho, nu, 0.0, g, Mobility(0.25, 1.0))
        np.testing.assert_allclose(H.values, 0.25 + np.mean(ms), rtol=1e-12)

    def test_expectation_below_floor(self):
        g = box(4)
        with pytest.raises(ConfigError):
            mobility_expectation(-np.ones((1, g.size)), np.ones((1, g.size)), 0.0, g, Mobility(0.5))


class TestDarcy:
    def test_constant_coefficients_are_hydrostatic(self):
        g = box(16)
        H = ScalarField.constant(g, 2.0)
        G = VectorField(g, np.stack([np.full(g.shape, 0.3), np.full(g.shape, -1.0)]))
        v, p = darcy_solve(H, G)
        assert max(np.abs(v.vx).max(), np.abs(v.vy).max()) < 1e-8
        # interior pressure differences reproduce G
        np.testing.assert_allclose(np.diff(p.values, axis=0) / g.dx, 0.3, atol=1e-8)
        np.testing.assert_allclose(np.diff(p.values, axis=1) / g.dx, -1.0, atol=1e-8)
        assert abs(p.values.mean()) < 1e-12

    def test_zero_forcing(self):
        g = box(8)
        v, p = darcy_solve(ScalarField.constant(g, 1.0), VectorField(g, np.zeros((2,) + g.shape)))
        assert np.all(p.values == 0.0) and np.all(v.vx == 0.0) and v.iterations == 0

    def test_stratified_layers_stay_at_rest(self):
        g = box(32)
        rho = layered_phase(g, 1.0, 3.0)
        H = ScalarField(g, 0.5 + rho.values)
        G = VectorField(g, np.stack([np.zeros(g.shape), -rho.values]))
        v, _ = darcy_solve(H, G)
        assert v.max_speed() < 1e-8
        assert v.residual <= 1e-9

    def test_manufactured_solenoidal_forcing(self):
        # G = curl psi is tangential on the walls, so with H = 1 the velocity is G itself
        errs = []
        for n in (16, 32, 64):
            g = box(n)
            X, Y = g.mesh()
            Gx = -4 * (1 - X**2) ** 2 * (1 - Y**2) * Y
            Gy = 4 * (1 - X**2) * X * (1 - Y**2) ** 2
            v, _ = darcy_solve(ScalarField.constant(g, 1.0), VectorField(g, np.stack([Gx, Gy])))
            vc = v.centered().values
            errs.append(max(np.abs(vc[0] - Gx).max(), np.abs(vc[1] - Gy).max()))
            assert v.max_divergence() <= 1e-9
            assert v.boundary_flux() == 0.0
        assert errs[0] > 2 * errs[1] > 4 * errs[2]

    def test_variable_mobility_is_divergence_free(self):
        g = box(32)
        X, Y = g.mesh()
        H = ScalarField(g, 1.0 + 0.5 * np.sin(3 * X) ** 2 + Y**2)
        G = VectorField(g, np.stack([np.zeros(g.shape), -(1.0 + (Y > 0.1 * np.cos(np.pi * X)))]))
        v, _ = darcy_solve(H, G)
        assert np.linalg.norm(v.divergence()) <= 1e-9
        assert v.max_speed() > 1e-3

    def test_near_singular_mobility(self):
        g = box(8)
        H = np.ones(g.shape)
        H[0, 0] = 1e-9
        with pytest.raises(ConditionError):
            darcy_solve(ScalarField(g, H), VectorField(g, np.zeros((2,) + g.shape)))

    def test_iteration_cap(self):
        g = box(32)
        X, Y = g.mesh()
        G = VectorField(g, np.stack([np.zeros(g.shape), -(1.0 + (Y > 0.2 * np.cos(np.pi * X)))]))
        with pytest.raises(EllipticError):
            darcy_solve(ScalarField(g, 1.0 + X**2), G, max_iters=1)

    def test_periodic_grid_rejected(self):
        g = GridSpec(2, 1.0, 8)
        with pytest.raises(DomainError):
            darcy_solve(ScalarField.constant(g, 1.0), VectorField(g, np.zeros((2,) + g.shape)))


class TestTransport:
    def test_face_layout(self):
        g = box(8)
        shape, lo = face_layout(g)
        np.testing.assert_array_equal(shape[:, :2], [[9, 8], [8, 9]])
        np.testing.assert_allclose(lo[0, :2], [-1.0, -1.0 + g.dx / 2])

    def test_rest_without_noise_is_identity(self):
        g = box(16)
        phase = layered_phase(g, 1.0, 2.0, amplitude=0.2)
        v = FaceVelocity(g, np.zeros((17, 16)), np.zeros((16, 17)), 0.0, 0)
        out = transport_phase(phase, v, 0.0, sample_path(0, 2, 1.0, 8), 1.0)
        np.testing.assert_allclose(out.values, phase.values, rtol=1e-14)

    @given(st.integers(0, 200))
    def test_noise_keeps_phase_range(self, seed):
        g = box(16)
        phase = layered_phase(g, 1.0, 2.0, amplitude=0.2)
        X, Y = g.mesh()
        v, _ = darcy_solve(ScalarField.constant(g, 1.0),
                           VectorField(g, np.stack([np.zeros(g.shape), -phase.values])))
        out = transport_phase(phase, v, 1.0, sample_path(seed, 2, 1.0, 8), 1.0)
        assert out.values.min() >= 1.0 - 1e-12 and out.values.max() <= 2.0 + 1e-12

    def test_face_drift_needs_mesh_slices(self):
        g = box(8)
        v = FaceVelocity(g, np.zeros((9, 8)), np.zeros((8, 9)), 0.0, 0)
        sd = face_drift([v] * 5, 1.0, 4)
        assert not sd.autonomous
        with pytest.raises(Exception):
            face_drift([v] * 3, 1.0, 4)


class TestFixedPoint:
    def test_uniform_phases_are_a_fixed_point(self):
        res = fixed_point_iterate(preset("uniform"))
        assert res.converged and len(res.states) == 1
        assert res.states[0].change <= 1e-12

    def test_stratified_without_noise(self):
        g = box(16)
        rho0 = layered_phase(g, 1.0, 2.0)
        cfg = MuskatConfig(g, 0.0, Mobility(1.0, 0.0), (0.0, -1.0), rho0, rho0, T=0.5, N=4,
                           n_paths=2, max_iterations=3)
        res = fixed_point_iterate(cfg)
        assert res.converged
        assert res.states[0].change < 1e-6

    def test_invariants_and_determinism(self):
        a = fixed_point_iterate(small_config())
        b = fixed_point_iterate(small_config())
        assert a.table() == b.table() and a.status == b.status
        lo, hi = a.config.bounds
        for s in a.states:
            assert s.max_div <= 10 * a.config.elliptic_tol
            assert s.boundary_flux == 0.0
            assert s.min_H >= a.config.mobility.h0
            assert lo - 1e-12 <= s.phase_min and s.phase_max <= hi + 1e-12
        assert a.status in ("converged", "non-contractive", "max-iterations")

    def test_progress_callback(self):
        seen = []
        res = fixed_point_iterate(small_config(max_iterations=2), progress=seen.append)
        assert [s.k for s in seen] == [s.k for s in res.states]

    def test_damping_changes_iterates(self):
        a = fixed_point_iterate(small_config(max_iterations=2))
        b = fixed_point_iterate(small_config(max_iterations=2, damping=0.5))
        assert a.states[0].change != b.states[0].change

    def test_default_tolerance(self):
        cfg = small_config()
        g = cfg.grid
        expect = 1e-3 * np.sqrt(cfg.T * np.sum(cfg.rho0.values ** 2) * g.cell_volume)
        assert cfg.tolerance == pytest.approx(expect)
        assert small_config(fp_tolerance=0.1).tolerance == 0.1


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(sigma=-1.0), dict(damping=0.0), dict(damping=1.5),
                                    dict(N=0), dict(n_paths=0), dict(gravity=(0.0,))])
    def test_rejected(self, kw):
        with pytest.raises(ConfigError):
            small_config(**kw)

    def test_periodic_grid_rejected(self):
        g = GridSpec(2, 1.0, 8)
        with pytest.raises(ConfigError):
            MuskatConfig(g, 0.1, Mobility(1.0), (0.0, -1.0), ScalarField.constant(g, 1.0),
                         ScalarField.constant(g, 1.0))

    def test_negative_phases_push_mobility_below_floor(self):
        g = box(8)
        with pytest.raises(ConfigError):
            MuskatConfig(g, 0.1, Mobility(0.5), (0.0, -1.0), ScalarField.constant(g, -1.0),
                         ScalarField.constant(g, 1.0))

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("desk128")

    def test_smooth_step(self):
        s = np.linspace(-2, 2, 401)
        f = smooth_step(s)
        assert f[0] == 0.0 and f[-1] == 1.0 and smooth_step(np.array(0.0)) == 0.5
        assert np.all(np.diff(f) >= 0)
