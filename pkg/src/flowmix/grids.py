"""Time grids, sampled curves and surfaces, and trapezoid quadrature.

All numerics in the package run on dense common grids; the quadrature rule
is the trapezoid rule on the native grid, exposed through per-point weights
so that inner products, norms and eigenproblems all share one discretization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError

DEFAULT_DOMAIN_END = 24.0


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Per-point trapezoid quadrature weights for an increasing grid."""
    points = np.asarray(points, dtype=float)
    w = np.empty_like(points)
    w[0] = 0.5 * (points[1] - points[0])
    w[-1] = 0.5 * (points[-1] - points[-2])
    w[1:-1] = 0.5 * (points[2:] - points[:-2])
    return w


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points (hours) within ``[0, domain_end]``.

    Parameters
    ----------
    points : np.ndarray
        Grid values, at least two, strictly increasing.
    domain_end : float, default=24.0
        Upper end of the admissible domain.
    """

    points: np.ndarray
    domain_end: float = DEFAULT_DOMAIN_END
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least 2 one-dimensional points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if pts[0] < -1e-12 or pts[-1] > self.domain_end + 1e-9:
            raise ValueError(
                f"grid points must lie within [0, {self.domain_end}]"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", trapezoid_weights(pts))

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    def matches(self, other: "TimeGrid") -> bool:
        return self is other or np.array_equal(self.points, other.points)

    def index_of(self, t: float, snap: bool = False) -> int:
        """Index of grid point ``t``; with ``snap`` the nearest one."""
        i = int(np.argmin(np.abs(self.points - t)))
        if not snap and abs(self.points[i] - t) > 1e-9:
            raise ValueError(f"{t} is not a grid point")
        return i

    def window(self, start: float, end: float) -> tuple[np.ndarray, "TimeGrid"]:
        """Indices and subgrid of points in the closed interval [start, end]."""
        mask = (self.points >= start - 1e-9) & (self.points <= end + 1e-9)
        idx = np.nonzero(mask)[0]
        if idx.size < 2:
            raise ValueError(f"window [{start}, {end}] holds fewer than 2 grid points")
        return idx, TimeGrid(self.points[idx], domain_end=self.domain_end)


def uniform_grid(start: float = 0.25, end: float = DEFAULT_DOMAIN_END,
                 step: float = 0.25) -> TimeGrid:
    """Uniform grid ``start, start+step, ..., end`` (default: 96 daily bins)."""
    n = int(round((end - start) / step)) + 1
    return TimeGrid(start + step * np.arange(n), domain_end=max(end, DEFAULT_DOMAIN_END))


@dataclass(frozen=True, eq=False)
class SampledCurve:
    """One trajectory sampled on a :class:`TimeGrid`."""

    grid: TimeGrid
    values: np.ndarray
    id: object = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise ValueError("values length must equal the grid length")
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class Surface:
    """A bivariate function sampled on a pair of grids, indexed (s, t)."""

    grid_s: TimeGrid
    grid_t: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid_s.n, self.grid_t.n):
            raise ValueError("surface shape must match the two grids")
        object.__setattr__(self, "values", vals)

    @property
    def is_square(self) -> bool:
        return self.grid_s.matches(self.grid_t)

    def asymmetry(self) -> float:
        if not self.is_square:
            raise ValueError("asymmetry is defined for square surfaces only")
        return float(np.max(np.abs(self.values - self.values.T)))


def inner_product(f: SampledCurve, g: SampledCurve) -> float:
    """Trapezoid approximation of the L2 inner product over the grid span."""
    if not f.grid.matches(g.grid):
        raise GridMismatchError("curves are sampled on different grids")
    return float(np.dot(f.grid.weights, f.values * g.values))


def l2_norm_sq(values: np.ndarray, weights: np.ndarray) -> float:
    """Squared quadrature L2 norm of sampled values."""
    return float(np.dot(weights, np.square(values)))


def curve_matrix(curves: list[SampledCurve]) -> tuple[TimeGrid, np.ndarray]:
    """Stack curves sharing one grid into an ``(n_curves, n_points)`` matrix."""
    if not curves:
        raise ValueError("need at least one curve")
    grid = curves[0].grid
    for c in curves[1:]:
        if not grid.matches(c.grid):
            raise GridMismatchError("curves are sampled on different grids")
    return grid, np.stack([c.values for c in curves])
