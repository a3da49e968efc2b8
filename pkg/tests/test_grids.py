import numpy as np
import pytest

from flowmix.errors import GridMismatchError
from flowmix.grids import (
    SampledCurve,
    Surface,
    TimeGrid,
    curve_matrix,
    inner_product,
    trapezoid_weights,
    uniform_grid,
)


class TestTimeGrid:
    def test_default_day_grid(self):
        g = uniform_grid()
        assert g.n == 96
        assert g.points[0] == 0.25
        assert g.points[-1] == 24.0

    def test_weights_sum_to_span(self):
        g = TimeGrid(np.array([0.0, 1.0, 2.5, 7.0]))
        assert trapezoid_weights(g.points).sum() == pytest.approx(7.0)
        assert g.weights.sum() == pytest.approx(g.span)

    @pytest.mark.parametrize(
        "points",
        [np.array([1.0]), np.array([2.0, 1.0]), np.array([0.0, 0.0, 1.0]),
         np.array([0.0, np.nan]), np.array([-1.0, 3.0]), np.array([1.0, 30.0])],
    )
    def test_invalid_grids_rejected(self, points):
        with pytest.raises(ValueError):
            TimeGrid(points)

    def test_window_and_index(self):
        g = uniform_grid()
        idx, sub = g.window(8.0, 12.0)
        assert sub.points[0] == 8.0 and sub.points[-1] == 12.0
        assert idx.size == 17
        assert g.index_of(12.0) == 47
        with pytest.raises(ValueError):
            g.index_of(12.1)
        assert g.index_of(12.1, snap=True) == 47


class TestInnerProduct:
    def test_constant_curves(self, closed_grid):
        f = SampledCurve(closed_grid, np.ones(closed_grid.n))
        assert inner_product(f, f) == pytest.approx(24.0)

    def test_quadratic_within_trapezoid_error(self):
        # closed form: integral of t^2 over [0, 24] is 4608; composite
        # trapezoid error for a quadratic is (b - a) h^2 |f''| / 12 = 4 h^2
        grid = TimeGrid(np.linspace(0.0, 24.0, 96))
        h = grid.points[1] - grid.points[0]
        f = SampledCurve(grid, grid.points)
        assert abs(inner_product(f, f) - 4608.0) <= 4.0 * h * h + 1e-9

    def test_orthonormalized_vectors(self, day_grid, ortho_basis):
        f = SampledCurve(day_grid, ortho_basis[1])
        g = SampledCurve(day_grid, ortho_basis[2])
        assert abs(inner_product(f, g)) < 1e-10
        assert inner_product(f, f) == pytest.approx(1.0, abs=1e-10)

    def test_mismatched_grids_raise(self):
        a = SampledCurve(uniform_grid(), np.zeros(96))
        b = SampledCurve(TimeGrid(np.linspace(0.0, 24.0, 97)), np.zeros(97))
        with pytest.raises(GridMismatchError):
            inner_product(a, b)

    def test_symmetric_and_bilinear(self, day_grid):
        rng = np.random.default_rng(7)
        f = SampledCurve(day_grid, rng.normal(size=96))
        g = SampledCurve(day_grid, rng.normal(size=96))
        h = SampledCurve(day_grid, rng.normal(size=96))
        assert inner_product(f, g) == pytest.approx(inner_product(g, f), rel=1e-14)
        combo = SampledCurve(day_grid, 2.0 * g.values + 3.0 * h.values)
        assert inner_product(f, combo) == pytest.approx(
            2.0 * inner_product(f, g) + 3.0 * inner_product(f, h), rel=1e-12
        )


class TestContainers:
    def test_curve_validation(self, day_grid):
        with pytest.raises(ValueError):
            SampledCurve(day_grid, np.zeros(95))
        with pytest.raises(ValueError):
            SampledCurve(day_grid, np.full(96, np.inf))

    def test_surface_validation(self, day_grid):
        with pytest.raises(ValueError):
            Surface(day_grid, day_grid, np.zeros((96, 95)))
        s = Surface(day_grid, day_grid, np.eye(96))
        assert s.is_square and s.asymmetry() == 0.0

    def test_curve_matrix(self, day_grid):
        curves = [SampledCurve(day_grid, np.full(96, float(i))) for i in range(3)]
        grid, mat = curve_matrix(curves)
        assert grid.matches(day_grid)
        assert mat.shape == (3, 96)
        other = SampledCurve(TimeGrid(np.linspace(0, 24, 96)), np.zeros(96))
        with pytest.raises(GridMismatchError):
            curve_matrix([curves[0], other])
