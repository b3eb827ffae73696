from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochtransport.errors import CatalogError, DomainError
from stochtransport.fields import (BOX, GridSpec, ScalarField, VectorField, catalog_names,
                                   centered_divergence, divergence, drift_catalog, evaluate_drift,
                                   make_drift, norms, sample_drift, tabulated_drift,
                                   validate_hypotheses)


def independent_hat(s, extent, cells):
    """Distance to the nearest cell edge: the hat used for the cellular stream function."""
    w = 2.0 * extent / cells
    u = np.mod(s + extent, w)
    return np.minimum(u, w - u)


class TestGrid:
    def test_spacing_and_nodes(self):
        g = GridSpec(2, 1.0, 8)
        assert g.dx == pytest.approx(0.25)
        assert g.shape == (8, 8)
        assert g.nodes().shape == (64, 2)
        assert g.axis()[0] == -1.0

    def test_box_nodes_are_cell_centred(self):
        g = GridSpec(1, 1.0, 4, BOX)
        np.testing.assert_allclose(g.axis(), [-0.75, -0.25, 0.25, 0.75])

    @pytest.mark.parametrize("n", [0, 3])
    def test_too_few_points(self, n):
        with pytest.raises(DomainError):
            GridSpec(2, 1.0, n)

    def test_non_finite_values_rejected(self):
        g = GridSpec(1, 1.0, 4)
        with pytest.raises(Exception):
            ScalarField(g, np.array([0.0, np.nan, 0.0, 0.0]))


class TestEvaluate:
    def test_zero(self):
        assert np.all(evaluate_drift(make_drift("zero", 3), 0.3, [0.1, 0.2, 0.3]) == 0.0)

    def test_rotation_at_unit_point(self):
        np.testing.assert_allclose(evaluate_drift(make_drift("rotation", 2), 0.0, [1.0, 0.0]),
                                   [0.0, 1.0])

    @given(st.floats(-1.4, 1.4), st.floats(-1.4, 1.4))
    def test_rotation_formula(self, x, y):
        b = evaluate_drift(make_drift("rotation", 2), 0.5, [x, y])
        np.testing.assert_allclose(b, [-y, x], atol=1e-15)

    @pytest.mark.parametrize("i,j", [(0, 0), (1, 2), (3, 3)])
    def test_cellular_matches_one_sided_difference(self, i, j):
        L, m, delta = 1.0, 4, 1e-7
        spec = make_drift("cellular", 2, extent=L, cells=m)
        w = 2 * L / m
        x = -L + (i + 0.5) * w
        y = -L + (j + 0.5) * w
        psi = lambda a, b: independent_hat(a, L, m) + independent_hat(b, L, m)
        expect = [-(psi(x, y + delta) - psi(x, y)) / delta, (psi(x + delta, y) - psi(x, y)) / delta]
        np.testing.assert_allclose(evaluate_drift(spec, 0.0, [x, y]), expect, atol=1e-6)

    def test_time_outside_horizon(self):
        spec = make_drift("rotation", 2, horizon=1.0)
        with pytest.raises(DomainError):
            evaluate_drift(spec, 1.5, [0.0, 0.0])

    def test_non_finite_is_catalog_error(self):
        with pytest.raises(CatalogError):
            evaluate_drift(make_drift("constant", 2, c=[np.inf, 0.0]), 0.0, [0.0, 0.0])

    def test_unknown_name(self):
        with pytest.raises(CatalogError):
            make_drift("vortex", 2)

    def test_tabulated_left_endpoint_in_time(self):
        g = GridSpec(1, 1.0, 8)
        f0 = VectorField(g, np.zeros((1, 8)))
        f1 = VectorField(g, np.ones((1, 8)))
        spec = tabulated_drift([f0, f1], [0.0, 0.5], horizon=1.0)
        assert evaluate_drift(spec, 0.49, [0.1])[0] == 0.0
        assert evaluate_drift(spec, 0.5, [0.1])[0] == 1.0


class TestDivergence:
    def test_linear_is_trace(self):
        g = GridSpec(2, 1.5, 32)
        div, sup = divergence(make_drift("linear", 2), g)
        np.testing.assert_allclose(div.values, 1.0)
        assert sup == pytest.approx(1.0)

    @pytest.mark.parametrize("name", ["rotation", "shear", "cellular", "zero", "constant"])
    def test_divergence_free_entries(self, name):
        g = GridSpec(2, 1.5, 64)
        vals = sample_drift(make_drift(name, 2), g).values
        assert np.max(np.abs(centered_divergence(g, vals))) <= 1e-12

    def test_cellular_interior_divergence_small_on_refinement(self):
        for n in (32, 64, 128):
            g = GridSpec(2, 1.5, n)
            div, _ = divergence(make_drift("cellular", 2), g)
            assert np.max(np.abs(div.values)) <= 10 * g.dx

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_catalog_satisfies_bounded_divergence(self, dim):
        g = GridSpec(dim, 1.5, 16)
        for name, spec in drift_catalog(dim).items():
            rep = validate_hypotheses(spec, g, [0.0, 0.5])
            assert rep.con1 and rep.con2, name
            assert np.isfinite(rep.div_integral)


class TestNorms:
    def test_constant_one_on_square(self):
        g = GridSpec(2, 1.0, 64)
        assert norms(ScalarField.constant(g, 1.0), "L2") == pytest.approx(2.0)

    @pytest.mark.parametrize("kind", ["L2", "Linf", "L1_ball"])
    def test_zero_field(self, kind):
        g = GridSpec(2, 1.0, 16)
        assert norms(ScalarField.constant(g, 0.0), kind, 0.5) == 0.0

    def test_gaussian_density_l2(self):
        s = 0.5
        g = GridSpec(1, 8.0, 512)
        x = g.axis()
        f = ScalarField(g, np.exp(-x**2 / (2 * s * s)) / np.sqrt(2 * np.pi * s * s))
        exact = (4 * np.pi * s * s) ** -0.25
        assert abs(norms(f, "L2") - exact) / exact < 1e-3

    def test_ball_larger_than_box(self):
        g = GridSpec(2, 1.0, 16)
        with pytest.raises(DomainError):
            norms(ScalarField.constant(g, 1.0), "L1_ball", 2.0)

    def test_quadrature_error_halves(self):
        exact = np.sqrt(np.sinh(2.0))
        errs = []
        for n in (16, 32, 64):
            g = GridSpec(1, 1.0, n, BOX)
            errs.append(abs(norms(ScalarField(g, np.exp(g.axis())), "L2") - exact))
        assert errs[1] <= errs[0] / 2 and errs[2] <= errs[1] / 2


def test_catalog_names_sorted_and_complete():
    names = catalog_names(2)
    assert names == sorted(names)
    assert {"zero", "rotation", "cellular"} <= set(names)
    assert "rotation" not in catalog_names(1)
