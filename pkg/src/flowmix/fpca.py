"""Per-pattern mean/covariance estimation and eigenanalysis on the grid.

A fitted :class:`ClusterModel` stores the smoothed mean, the full smoothed
covariance surface, the quadrature-orthonormal eigenfunctions with their
eigenvalues, the retained component count, and the measurement-noise
variance.  Keeping the covariance surface inside the model lets the
observed/future subdomain decomposition reuse its blocks without any
re-smoothing, which is what makes dynamic prediction cheap at every split
time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import Bandwidths
from .errors import GridMismatchError, InvalidCovarianceError, NoVarianceError
from .grids import SampledCurve, Surface, TimeGrid, curve_matrix
from .smoothing import (
    default_bandwidths,
    loclin_1d,
    loclin_2d_grid,
    select_bandwidth_cv,
    select_bandwidth_cv_2d,
)

SYMMETRY_RTOL = 1e-8
NEAR_SINGULAR_EIGENVALUE = 1e-12


def _estimate_mean(curves: list[SampledCurve], bandwidth: float | None = None,
                   candidates=None, folds: int = 10,
                   seed: int = 0) -> tuple[SampledCurve, float]:
    if len(curves) < 2:
        raise ValueError("mean estimation needs at least 2 curves")
    grid, ymat = curve_matrix(curves)
    n = ymat.shape[0]
    if bandwidth is None:
        if candidates is None:
            candidates = default_bandwidths(np.median(np.diff(grid.points)))
        xs = np.tile(grid.points, n)
        bandwidth = select_bandwidth_cv(xs, ymat.ravel(), candidates,
                                        folds=folds, seed=seed)
    fit = loclin_1d(grid.points, ymat.mean(axis=0), float(n) * np.ones(grid.n),
                    bandwidth, grid.points)
    return SampledCurve(grid, fit), float(bandwidth)


def estimate_mean(curves: list[SampledCurve], bandwidth: float | None = None,
                  candidates=None, folds: int = 10, seed: int = 0) -> SampledCurve:
    """Local-linear smooth of the pooled scatter of all curves.

    The bandwidth is chosen by K-fold cross-validation on the pooled
    scatter unless given.  Because all curves share the grid, the pooled
    fit equals a weighted fit through the per-point cross-sectional means.
    """
    curve, _ = _estimate_mean(curves, bandwidth=bandwidth, candidates=candidates,
                              folds=folds, seed=seed)
    return curve


@dataclass
class CovarianceEstimate:
    """Smoothed covariance surface plus the measurement-noise variance."""

    surface: Surface
    noise_variance: float
    noise_clamped: bool
    surface_bandwidth: float
    diagonal_bandwidth: float


def estimate_covariance(curves: list[SampledCurve], mean: SampledCurve,
                        surface_bandwidth: float | None = None,
                        diagonal_bandwidth: float | None = None,
                        candidates=None, folds: int = 10,
                        seed: int = 0) -> CovarianceEstimate:
    """Smooth centered raw products into a symmetric covariance surface.

    Off-diagonal products feed a locally weighted plane fit; the diagonal
    is excluded because its expectation carries the measurement-error
    variance.  That variance is then estimated as the average gap between
    a 1-D smooth of the diagonal raw products and the fitted surface
    diagonal, clamped at zero (with a flag) if negative.
    """
    if len(curves) < 3:
        raise ValueError("covariance estimation needs at least 3 curves")
    grid, ymat = curve_matrix(curves)
    if not grid.matches(mean.grid):
        raise GridMismatchError("mean is sampled on a different grid")
    n, m = ymat.shape
    resid = ymat - mean.values[None, :]
    products = resid[:, :, None] * resid[:, None, :]
    offdiag = ~np.eye(m, dtype=bool)
    step = float(np.median(np.diff(grid.points)))
    if candidates is None:
        candidates = default_bandwidths(step)

    if surface_bandwidth is None:
        rng = np.random.default_rng(seed)
        fold_of = rng.integers(0, folds, size=(n, m, m))
        weight_by_fold = np.zeros((folds, m, m))
        value_by_fold = np.zeros((folds, m, m))
        for f in range(folds):
            mask = (fold_of == f) & offdiag[None, :, :]
            w_f = mask.sum(axis=0).astype(float)
            weight_by_fold[f] = w_f
            with np.errstate(invalid="ignore"):
                value_by_fold[f] = np.where(
                    w_f > 0, (products * mask).sum(axis=0) / np.maximum(w_f, 1e-300), 0.0
                )
        sq_sum = float((np.square(products) * offdiag[None, :, :]).sum())
        within_ss = sq_sum - float((weight_by_fold * np.square(value_by_fold)).sum())
        surface_bandwidth = select_bandwidth_cv_2d(
            grid.points, grid.points, value_by_fold, weight_by_fold,
            within_ss, candidates,
        )

    weights = np.full((m, m), float(n))
    weights[~offdiag] = 0.0
    cell_means = products.mean(axis=0)
    raw_surface = loclin_2d_grid(
        grid.points, grid.points, np.where(offdiag, cell_means, 0.0), weights,
        surface_bandwidth, surface_bandwidth, grid.points, grid.points,
    )
    cov = 0.5 * (raw_surface + raw_surface.T)

    diag_products = np.square(resid)
    if diagonal_bandwidth is None:
        xs = np.tile(grid.points, n)
        diagonal_bandwidth = select_bandwidth_cv(xs, diag_products.ravel(),
                                                 candidates, folds=folds, seed=seed)
    diag_fit = loclin_1d(grid.points, diag_products.mean(axis=0),
                         float(n) * np.ones(m), diagonal_bandwidth, grid.points)
    sigma2 = float(np.mean(diag_fit - np.diag(cov)))
    clamped = sigma2 < 0.0
    if clamped:
        warnings.warn("negative noise-variance estimate clamped to zero")
        sigma2 = 0.0
    return CovarianceEstimate(
        surface=Surface(grid, grid, cov),
        noise_variance=sigma2,
        noise_clamped=clamped,
        surface_bandwidth=float(surface_bandwidth),
        diagonal_bandwidth=float(diagonal_bandwidth),
    )


def _fix_signs(phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Resolve eigenfunction signs: nonnegative integral, then nonnegative
    first value; keeps scores and regression signs reproducible."""
    integrals = phi @ weights
    tol = 1e-10 * np.sqrt(weights.sum())
    flip = integrals < -tol
    tied = np.abs(integrals) <= tol
    flip |= tied & (phi[:, 0] < 0)
    out = phi.copy()
    out[flip] *= -1.0
    return out


def eigendecompose(cov: Surface) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature-weighted eigenpairs of a symmetric covariance surface.

    Returns eigenvalues (nonincreasing, strictly positive after clipping)
    and eigenfunction rows orthonormal under the trapezoid inner product.
    """
    if not cov.is_square:
        raise InvalidCovarianceError("covariance surface must be square")
    scale = max(1.0, float(np.max(np.abs(cov.values))))
    if cov.asymmetry() > SYMMETRY_RTOL * scale:
        raise InvalidCovarianceError(
            f"covariance asymmetry {cov.asymmetry():.3e} exceeds tolerance"
        )
    w = cov.grid_s.weights
    sqw = np.sqrt(w)
    b = sqw[:, None] * cov.values * sqw[None, :]
    b = 0.5 * (b + b.T)
    lam, vec = np.linalg.eigh(b)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    vec = vec[:, order]
    keep = lam > 0.0
    lam = lam[keep]
    phi = (vec[:, keep] / sqw[:, None]).T
    return lam, _fix_signs(phi, w)


def select_num_components(eigenvalues: np.ndarray, delta: float = 0.90) -> int:
    """Smallest count whose cumulative share of total variance reaches
    ``delta`` (positive eigenvalues only)."""
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    lam = np.asarray(eigenvalues, dtype=float)
    positive = lam > 0
    if not np.any(positive):
        raise NoVarianceError("no positive eigenvalues: nothing to explain")
    total = lam[positive].sum()
    cum = np.cumsum(np.where(positive, lam, 0.0)) / total
    hit = np.nonzero(cum >= delta - 1e-12)[0]
    return int(hit[0]) + 1


@dataclass(eq=False)
class BlockModel:
    """A pattern model restricted to one subinterval of the grid.

    Two truncation levels coexist: ``num_components`` re-selects the
    count by explained variance within the block (used by projection
    distances), while ``num_regression`` keeps the parent model's count
    (limited by the block's positive rank) as the score-regression and
    prediction sums require.
    """

    grid: TimeGrid
    indices: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    num_components: int
    num_regression: int = 0

    def scores(self, values: np.ndarray, count: int | None = None) -> np.ndarray:
        """Quadrature projections of one curve (or a stack) onto the
        leading block eigenfunctions."""
        m = self.num_components if count is None else count
        centered = values - self.mean
        phi = self.eigenfunctions[:m]
        return centered @ (phi * self.grid.weights[None, :]).T

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        m = scores.shape[-1]
        return self.mean + scores @ self.eigenfunctions[:m]


@dataclass(eq=False)
class SubdomainModel:
    """Observed/future decomposition of a pattern model at split time tau."""

    tau: float
    observed: BlockModel
    future: BlockModel
    cross_block: np.ndarray


@dataclass(eq=False)
class ClusterModel:
    """One trajectory pattern: center structure plus retained components."""

    grid: TimeGrid
    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    num_components: int
    noise_variance: float
    fve_threshold: float = 0.90
    label: int = 0
    noise_clamped: bool = False
    bandwidths: Bandwidths = field(default_factory=Bandwidths)
    _blocks: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_grid(self) -> int:
        return self.grid.n

    def block(self, start: float, end: float) -> BlockModel:
        """Model restricted to [start, end]: the covariance block of the
        stored surface is eigendecomposed and the component count is
        re-selected at the model's variance threshold (never above the
        full-domain count)."""
        key = (round(float(start), 9), round(float(end), 9))
        cached = self._blocks.get(key)
        if cached is not None:
            return cached
        idx, subgrid = self.grid.window(start, end)
        sub_cov = self.covariance[np.ix_(idx, idx)]
        lam, phi = eigendecompose(Surface(subgrid, subgrid, sub_cov))
        if lam.size == 0:
            m = 0
            m_reg = 0
        else:
            m = min(select_num_components(lam, self.fve_threshold), self.num_components)
            # score-noise floor: eigenvalues below it carry more measurement
            # noise than signal and would explode the lambda-normalized
            # regression coefficients
            step = float(np.median(np.diff(subgrid.points)))
            floor = self.noise_variance * step
            m_reg = min(self.num_components, int(np.count_nonzero(lam > floor)))
        out = BlockModel(subgrid, idx, self.mean[idx], lam, phi, m,
                         num_regression=m_reg)
        self._blocks[key] = out
        return out

    def full_block(self) -> BlockModel:
        """The trivial restriction to the whole grid (uses stored eigenpairs)."""
        key = (round(float(self.grid.points[0]), 9), round(float(self.grid.points[-1]), 9))
        cached = self._blocks.get(key)
        if cached is None:
            cached = BlockModel(self.grid, np.arange(self.grid.n), self.mean,
                                self.eigenvalues, self.eigenfunctions,
                                self.num_components,
                                num_regression=self.num_components)
            self._blocks[key] = cached
        return cached


def restrict_model(model: ClusterModel, tau: float,
                   omega: float | None = None) -> SubdomainModel:
    """Split a fitted model at tau into observed and future block models.

    ``tau`` must be a grid point strictly inside the span (off-grid values
    snap to the nearest point with a warning).  With ``omega`` the observed
    part is further limited to ``[max(start, tau - omega), tau]``.  No
    surface is re-estimated: both diagonal blocks come from slicing the
    stored covariance.
    """
    pts = model.grid.points
    if tau <= pts[0] + 1e-9 or tau >= pts[-1] - 1e-9:
        raise ValueError(f"tau={tau} must lie strictly inside ({pts[0]}, {pts[-1]})")
    i = model.grid.index_of(tau, snap=True)
    snapped = float(pts[i])
    if abs(snapped - tau) > 1e-9:
        warnings.warn(f"tau={tau} snapped to nearest grid point {snapped}")
    start = pts[0] if omega is None else max(pts[0], snapped - omega)
    observed = model.block(start, snapped)
    future = model.block(snapped, pts[-1])
    cross = model.covariance[np.ix_(observed.indices, future.indices)]
    return SubdomainModel(snapped, observed, future, cross)


def compute_scores(curve: SampledCurve, model: ClusterModel,
                   tau: float | None = None,
                   omega: float | None = None) -> np.ndarray:
    """Project a curve onto a model's leading components.

    With ``tau`` the projection runs on the observed subdomain (optionally
    windowed by ``omega``) and the curve must be sampled exactly on that
    subgrid; otherwise the full grid is used.
    """
    if tau is None:
        block = model.full_block()
    else:
        sub = restrict_model(model, tau, omega=omega)
        block = sub.observed
    if not curve.grid.matches(block.grid):
        raise GridMismatchError("curve grid does not match the projection domain")
    return block.scores(curve.values)


def reconstruction(curve: SampledCurve, model: ClusterModel) -> np.ndarray:
    """Truncated expansion of one curve in the model's components."""
    block = model.full_block()
    return block.reconstruct(block.scores(curve.values))


def fit_cluster_model(curves: list[SampledCurve], fve_threshold: float = 0.90,
                      label: int = 0, bandwidths: Bandwidths | None = None,
                      folds: int = 10, seed: int = 0) -> ClusterModel:
    """Estimate mean, covariance surface, eigenstructure and component
    count for one cluster of complete curves.

    Passing ``bandwidths`` skips cross-validation and reuses earlier
    choices, which the iterative clustering loop relies on.
    """
    bw = bandwidths or Bandwidths()
    mean, mean_bw = _estimate_mean(curves, bandwidth=bw.mean, folds=folds, seed=seed)
    cov = estimate_covariance(
        curves, mean, surface_bandwidth=bw.covariance,
        diagonal_bandwidth=bw.diagonal, folds=folds, seed=seed,
    )
    lam, phi = eigendecompose(cov.surface)
    if lam.size == 0:
        raise NoVarianceError(
            f"cluster {label}: smoothed covariance has no positive eigenvalues"
        )
    m = select_num_components(lam, fve_threshold)
    grid = curves[0].grid
    return ClusterModel(
        grid=grid,
        mean=mean.values,
        covariance=cov.surface.values,
        eigenvalues=lam,
        eigenfunctions=phi,
        num_components=m,
        noise_variance=cov.noise_variance,
        fve_threshold=fve_threshold,
        label=label,
        noise_clamped=cov.noise_clamped,
        bandwidths=Bandwidths(
            mean=mean_bw,
            covariance=cov.surface_bandwidth,
            diagonal=cov.diagonal_bandwidth,
        ),
    )
