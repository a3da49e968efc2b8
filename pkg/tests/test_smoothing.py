import numpy as np
import pytest

from flowmix.errors import BandwidthSelectionError, SmoothingError
from flowmix.grids import TimeGrid, uniform_grid
from flowmix.smoothing import (
    cv_errors,
    default_bandwidths,
    local_linear_smooth_1d,
    local_linear_smooth_2d,
    loclin_2d_grid,
    select_bandwidth_cv,
)


class TestLocalLinear1d:
    @pytest.mark.parametrize("h", [0.3, 1.0, 5.0, 50.0])
    def test_reproduces_lines_exactly(self, day_grid, h):
        xs = day_grid.points
        ys = 2.0 * xs + 3.0
        fit = local_linear_smooth_1d(xs, ys, np.ones(96), h, day_grid)
        assert np.max(np.abs(fit.values - ys)) < 1e-8

    def test_recovers_sine_with_cv_bandwidth(self, day_grid):
        # known-truth oracle: the fitted curve is compared against sin(t)
        rng = np.random.default_rng(3)
        xs = day_grid.points
        truth = np.sin(xs)
        ys = truth + rng.normal(0.0, 0.01, size=96)
        h = select_bandwidth_cv(xs, ys, np.geomspace(0.1, 2.0, 8))
        fit = local_linear_smooth_1d(xs, ys, np.ones(96), h, day_grid)
        interior = (xs > 1.0) & (xs < 23.0)
        assert np.max(np.abs(fit.values[interior] - truth[interior])) < 0.05

    def test_huge_bandwidth_matches_global_line(self, day_grid):
        # oracle: direct 2-parameter weighted least squares
        rng = np.random.default_rng(11)
        xs = day_grid.points
        ys = 1.0 + 0.5 * xs + rng.normal(0.0, 1.0, size=96)
        w = rng.uniform(0.5, 2.0, size=96)
        big = 1e6  # Gaussian weights are flat to ~1e-9 across the span
        fit = local_linear_smooth_1d(xs, ys, w, big, day_grid)
        design = np.column_stack([np.ones(96), xs])
        coef = np.linalg.solve(design.T @ (design * w[:, None]), design.T @ (w * ys))
        assert np.max(np.abs(fit.values - design @ coef)) < 1e-6

    def test_permutation_invariance(self, day_grid):
        rng = np.random.default_rng(5)
        xs = day_grid.points.copy()
        ys = np.cos(xs) + rng.normal(0.0, 0.1, 96)
        w = rng.uniform(0.5, 2.0, 96)
        perm = rng.permutation(96)
        a = local_linear_smooth_1d(xs, ys, w, 1.0, day_grid)
        b = local_linear_smooth_1d(xs[perm], ys[perm], w[perm], 1.0, day_grid)
        assert np.allclose(a.values, b.values, atol=1e-10)

    def test_degenerate_neighborhood_widens_then_fails(self):
        grid = TimeGrid(np.array([0.0, 10.0, 20.0]))
        xs = np.array([0.0, 0.0, 0.0, 20.0])
        ys = np.array([1.0, 1.0, 1.0, 2.0])
        # h tiny: the middle evaluation point sees nothing until widening
        fit = local_linear_smooth_1d(xs, ys, np.ones(4), 1.3, grid)
        assert np.all(np.isfinite(fit.values))
        with pytest.raises(SmoothingError):
            local_linear_smooth_1d(
                np.array([5.0, 5.0, 5.0]), np.array([1.0, 1.0, 1.0]),
                np.ones(3), 0.01, grid,
            )


class TestLocalLinear2d:
    def test_reproduces_planes_exactly(self, day_grid):
        rng = np.random.default_rng(1)
        s = rng.uniform(0, 24, 300)
        t = rng.uniform(0, 24, 300)
        v = 1.0 + 2.0 * s - t
        pts = np.column_stack([s, t, v, np.ones(300)])
        small = TimeGrid(np.linspace(0.5, 23.5, 12))
        out = local_linear_smooth_2d(pts, (3.0, 3.0), small, small)
        expect = 1.0 + 2.0 * small.points[:, None] - small.points[None, :]
        assert np.max(np.abs(out.values - expect)) < 1e-8

    def test_product_surface_recovery(self):
        # truth oracle: value = s * t has no pure second derivatives, so a
        # local plane tracks it closely away from the boundary
        grid = TimeGrid(np.linspace(0.0, 24.0, 24))
        s, t = np.meshgrid(grid.points, grid.points, indexing="ij")
        pts = np.column_stack([s.ravel(), t.ravel(), (s * t).ravel(), np.ones(s.size)])
        out = local_linear_smooth_2d(pts, (2.0, 2.0), grid, grid)
        interior = slice(2, -2)
        err = np.abs(out.values - s * t)[interior, interior]
        assert err.max() < 0.1 * np.abs(s * t).max()

    def test_symmetric_scatter_gives_symmetric_surface(self):
        grid = TimeGrid(np.linspace(0.0, 10.0, 8))
        s, t = np.meshgrid(grid.points, grid.points, indexing="ij")
        v = np.cos(s - t) + s * t / 10.0  # symmetric in (s, t)
        pts = np.column_stack([s.ravel(), t.ravel(), v.ravel(), np.ones(s.size)])
        out = local_linear_smooth_2d(pts, (2.5, 2.5), grid, grid)
        assert out.asymmetry() < 1e-10

    def test_grid_fast_path_matches_scatter_path(self):
        grid = TimeGrid(np.linspace(0.0, 12.0, 10))
        rng = np.random.default_rng(9)
        v = rng.normal(size=(10, 10))
        w = rng.uniform(0.5, 2.0, size=(10, 10))
        w[2, 3] = 0.0
        fast = loclin_2d_grid(grid.points, grid.points, v, w, 2.0, 2.0,
                              grid.points, grid.points)
        s, t = np.meshgrid(grid.points, grid.points, indexing="ij")
        pts = np.column_stack([s.ravel(), t.ravel(), v.ravel(), w.ravel()])
        slow = local_linear_smooth_2d(pts, (2.0, 2.0), grid, grid)
        assert np.allclose(fast, slow.values, atol=1e-9)


class TestBandwidthSelection:
    def test_linear_data_ties_break_to_largest(self, day_grid):
        xs = day_grid.points
        ys = 4.0 - 0.25 * xs
        candidates = [0.5, 2.0, 8.0]
        assert select_bandwidth_cv(xs, ys, candidates) == 8.0

    def test_cv_curve_is_u_shaped_on_noisy_sine(self, day_grid):
        # oracle: the exhaustive CV-error curve, computed directly
        rng = np.random.default_rng(21)
        xs = day_grid.points
        ys = np.sin(xs) + rng.normal(0.0, 0.3, xs.size)
        candidates = np.geomspace(0.25, 12.0, 9)
        errs = cv_errors(xs, ys, candidates, folds=10, seed=0)
        picked = select_bandwidth_cv(xs, ys, candidates, folds=10, seed=0)
        assert candidates[0] < picked < candidates[-1]
        assert np.argmin(errs) not in (0, candidates.size - 1)

    def test_deterministic_under_seed(self, day_grid):
        rng = np.random.default_rng(2)
        xs = day_grid.points
        ys = np.sin(xs) + rng.normal(0.0, 0.2, 96)
        cands = np.geomspace(0.3, 6.0, 7)
        a = select_bandwidth_cv(xs, ys, cands, seed=42)
        b = select_bandwidth_cv(xs, ys, cands, seed=42)
        assert a == b

    def test_collapse_matches_bruteforce_cv(self):
        # the collapsed-cell shortcut must equal plain leave-fold-out CV
        rng = np.random.default_rng(17)
        xs = np.tile(np.linspace(0.0, 10.0, 12), 4)
        ys = 0.5 * xs**2 + rng.normal(0.0, 0.4, xs.size)
        cands = np.array([0.8, 2.0, 5.0])
        got = cv_errors(xs, ys, cands, folds=5, seed=3)
        from flowmix.smoothing import _fold_assignment, loclin_1d

        fold_of = _fold_assignment(xs.size, 5, 3)
        want = np.zeros(3)
        for ci, h in enumerate(cands):
            sse, cnt = 0.0, 0
            for f in range(5):
                held = fold_of == f
                pred = loclin_1d(xs[~held], ys[~held], np.ones((~held).sum()), h, xs[held])
                sse += float(np.sum((ys[held] - pred) ** 2))
                cnt += int(held.sum())
            want[ci] = sse / cnt
        assert np.allclose(got, want, rtol=1e-10)

    def test_all_candidates_failing_raises(self):
        xs = np.array([0.0, 0.0, 0.0, 0.0])
        ys = np.ones(4)
        with pytest.raises(BandwidthSelectionError):
            select_bandwidth_cv(xs, ys, [1e-6], folds=2)

    def test_default_candidate_grid(self):
        cands = default_bandwidths(0.25)
        assert cands.size == 10
        assert cands[0] == pytest.approx(0.5)
        assert cands[-1] == pytest.approx(8.0)
