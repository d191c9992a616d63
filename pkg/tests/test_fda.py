import math

import numpy as np
import pytest
from scipy import integrate as spi
from scipy.interpolate import BSpline

from funciv.errors import DimensionError, GridMismatchError, InvalidBasisError, InvalidGridError
from funciv.fda import (
    FunctionalSample,
    TimeGrid,
    build_bspline_basis,
    clamped_knots,
    integrate,
    project_scores,
    reconstruct_coefficient,
    trapezoid_weights,
)


def naive_bspline(k, order, knots, x):
    """Textbook scalar Cox-de Boor recursion (right end folded into the last span)."""
    if order == 1:
        lo, hi = knots[k], knots[k + 1]
        if lo <= x < hi:
            return 1.0
        last = np.flatnonzero(knots < knots[-1]).max()
        return 1.0 if (x == knots[-1] and k == last) else 0.0
    out = 0.0
    d1 = knots[k + order - 1] - knots[k]
    if d1 > 0:
        out += (x - knots[k]) / d1 * naive_bspline(k, order - 1, knots, x)
    d2 = knots[k + order] - knots[k + 1]
    if d2 > 0:
        out += (knots[k + order] - x) / d2 * naive_bspline(k + 1, order - 1, knots, x)
    return out


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(5)
        np.testing.assert_array_equal(g.points, [0, 0.25, 0.5, 0.75, 1])
        assert g.n_grid == 5

    @pytest.mark.parametrize("pts", [[0.5], [0.2, 0.1], [0.0, 0.5, 0.5], [-0.1, 0.5], [0.5, 1.2]])
    def test_invalid(self, pts):
        with pytest.raises(InvalidGridError):
            TimeGrid(np.array(pts))

    def test_points_read_only(self):
        g = TimeGrid.uniform(4)
        with pytest.raises(ValueError):
            g.points[0] = 3.0


class TestBasis:
    def test_bernstein_endpoints(self):
        b = build_bspline_basis(4, 4, TimeGrid.uniform(101))
        np.testing.assert_allclose(b.eval_matrix[0], [1, 0, 0, 0], atol=1e-14)
        np.testing.assert_allclose(b.eval_matrix[-1], [0, 0, 0, 1], atol=1e-14)

    def test_bernstein_closed_form(self):
        g = TimeGrid.uniform(101)
        b = build_bspline_basis(4, 4, g)
        t = g.points
        expected = np.column_stack([math.comb(3, k) * t**k * (1 - t) ** (3 - k) for k in range(4)])
        np.testing.assert_allclose(b.eval_matrix, expected, atol=1e-12)

    @pytest.mark.parametrize("K,order", [(4, 4), (5, 4), (9, 4), (7, 3), (6, 2), (12, 4)])
    def test_partition_of_unity_and_nonnegative(self, K, order):
        b = build_bspline_basis(K, order, TimeGrid.uniform(100))
        np.testing.assert_allclose(b.eval_matrix.sum(axis=1), 1.0, atol=1e-10)
        assert b.eval_matrix.min() >= 0.0
        assert b.eval_matrix.shape == (100, K)

    def test_one_interior_knot_matches_independent_recursion(self):
        g = TimeGrid.uniform(1001)
        b = build_bspline_basis(5, 4, g)
        knots = clamped_knots(5, 4)
        np.testing.assert_allclose(knots, [0, 0, 0, 0, 0.5, 1, 1, 1, 1])
        mid = 500
        assert g.points[mid] == 0.5
        oracle = [naive_bspline(k, 4, knots, 0.5) for k in range(5)]
        np.testing.assert_allclose(b.eval_matrix[mid], oracle, atol=1e-10)
        full = np.array([[naive_bspline(k, 4, knots, x) for k in range(5)] for x in g.points])
        np.testing.assert_allclose(b.eval_matrix, full, atol=1e-10)

    def test_matches_scipy(self):
        g = TimeGrid.uniform(257)
        b = build_bspline_basis(9, 4, g)
        ref = BSpline.design_matrix(g.points, clamped_knots(9, 4), 3).toarray()
        np.testing.assert_allclose(b.eval_matrix, ref, atol=1e-12)

    def test_errors(self):
        with pytest.raises(InvalidBasisError):
            build_bspline_basis(3, 4, TimeGrid.uniform(20))
        with pytest.raises(InvalidBasisError):
            build_bspline_basis(5, 1, TimeGrid.uniform(20))
        with pytest.raises(InvalidGridError):
            TimeGrid(np.array([0.3]))

    def test_cached_instance(self):
        g = TimeGrid.uniform(50)
        assert build_bspline_basis(6, 4, g) is build_bspline_basis(6, 4, TimeGrid.uniform(50))


class TestProjection:
    def test_zero_curve(self, grid100):
        b = build_bspline_basis(6, 4, grid100)
        s = project_scores(FunctionalSample(np.zeros((3, 100)), grid100), b)
        assert np.all(s.scores == 0)

    def test_constant_curve(self, grid100):
        b = build_bspline_basis(7, 4, grid100)
        s = project_scores(FunctionalSample(np.ones((1, 100)), grid100), b)
        assert s.scores.sum() == pytest.approx(1.0, abs=1e-8)

    def test_linear_curve_against_adaptive_quadrature(self):
        g = TimeGrid.uniform(1001)
        b = build_bspline_basis(4, 4, g)
        s = project_scores(FunctionalSample(g.points[None, :], g), b).scores[0]
        for k in range(4):
            val, _ = spi.quad(lambda t: t * math.comb(3, k) * t**k * (1 - t) ** (3 - k), 0, 1)
            assert s[k] == pytest.approx(val, abs=1e-6)

    def test_grid_mismatch(self):
        b = build_bspline_basis(5, 4, TimeGrid.uniform(100))
        with pytest.raises(GridMismatchError):
            project_scores(FunctionalSample(np.zeros((2, 50)), TimeGrid.uniform(50)), b)

    def test_score_shape_matches_basis(self, grid100, rng):
        b = build_bspline_basis(8, 4, grid100)
        s = project_scores(FunctionalSample(rng.standard_normal((4, 100)), grid100), b)
        assert s.scores.shape == (4, 8)
        assert s.basis is b


class TestReconstruct:
    def test_zero_and_one(self, grid100):
        b = build_bspline_basis(6, 4, grid100)
        assert np.all(reconstruct_coefficient(np.zeros(6), b) == 0)
        np.testing.assert_allclose(reconstruct_coefficient(np.ones(6), b), 1.0, atol=1e-10)

    def test_sine_least_squares(self, grid100):
        b = build_bspline_basis(9, 4, grid100)
        target = np.sin(2 * np.pi * grid100.points)
        w, *_ = np.linalg.lstsq(b.eval_matrix, target, rcond=None)
        assert np.max(np.abs(reconstruct_coefficient(w, b) - target)) < 0.02

    def test_length_mismatch(self, grid100):
        b = build_bspline_basis(6, 4, grid100)
        with pytest.raises(DimensionError):
            reconstruct_coefficient(np.ones(5), b)


class TestIntegrate:
    def test_constant(self, grid100):
        assert integrate(np.ones(100), grid100) == 1.0

    def test_full_period_sine(self):
        g = TimeGrid.uniform(101)
        assert abs(integrate(np.sin(2 * np.pi * g.points), g)) < 1e-3

    def test_square(self):
        g = TimeGrid.uniform(1001)
        assert integrate(g.points**2, g) == pytest.approx(1 / 3, abs=1e-5)

    def test_rowwise(self, grid100):
        vals = np.vstack([np.ones(100), 2 * grid100.points])
        np.testing.assert_allclose(integrate(vals, grid100), [1.0, 1.0])

    def test_exact_for_piecewise_linear(self):
        g = TimeGrid(np.array([0.0, 0.1, 0.4, 0.45, 1.0]))
        f = np.array([1.0, -2.0, 3.0, 0.5, 2.0])
        exact = sum((g.points[i + 1] - g.points[i]) * (f[i] + f[i + 1]) / 2 for i in range(4))
        assert integrate(f, g) == pytest.approx(exact, rel=1e-15)

    def test_weights_sum_to_span(self):
        g = TimeGrid(np.array([0.1, 0.3, 0.35, 0.9]))
        assert trapezoid_weights(g).sum() == pytest.approx(0.8)

    def test_length_mismatch(self, grid100):
        with pytest.raises(DimensionError):
            integrate(np.ones(99), grid100)
