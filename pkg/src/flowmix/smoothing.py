"""Local-linear scatterplot smoothers and cross-validated bandwidth choice.

The kernel is a Gaussian truncated at four bandwidths, which keeps local
neighborhoods nonempty near the boundary while bounding the cost of the
weight computations.  Both smoothers reproduce globally linear (1-D) and
planar (2-D) inputs exactly for every bandwidth, a property the test suite
leans on heavily.

Local coordinates are scaled by the bandwidth before the normal equations
are formed, so the degeneracy guards below are scale-free.  Degenerate
neighborhoods are retried with the bandwidth doubled up to three times
before a :class:`~flowmix.errors.SmoothingError` is raised.
"""

from __future__ import annotations

import numpy as np

from .errors import BandwidthSelectionError, SmoothingError
from .grids import SampledCurve, Surface, TimeGrid

KERNEL_TRUNCATION = 4.0
WIDEN_ATTEMPTS = 3
CV_TIE_RTOL = 1e-12
_DET_RTOL = 1e-12


def default_bandwidths(step: float, num: int = 10, low_steps: float = 2.0,
                       high_steps: float = 32.0) -> np.ndarray:
    """Log-spaced candidate bandwidths from ``low_steps`` to ``high_steps``
    grid steps; spans clear under- to over-smoothing on a dense grid."""
    return np.geomspace(low_steps * step, high_steps * step, num)


def _kernel(u: np.ndarray) -> np.ndarray:
    out = np.exp(-0.5 * np.square(u))
    out[np.abs(u) > KERNEL_TRUNCATION] = 0.0
    return out


def _loclin_1d_pass(x, y, w, h, xout):
    """One local-linear pass; returns (fit, ok) with ok False where degenerate."""
    u = (xout[:, None] - x[None, :]) / h
    k = _kernel(u) * w[None, :]
    s0 = k.sum(axis=1)
    ku = k * u
    s1 = ku.sum(axis=1)
    s2 = (ku * u).sum(axis=1)
    t0 = k @ y
    t1 = ku @ y
    det = s0 * s2 - s1 * s1
    npos = np.count_nonzero(k > 0, axis=1)
    ok = (npos >= 2) & (det > _DET_RTOL * np.maximum(s0 * s2, 1e-300))
    fit = np.zeros_like(s0)
    good = ok
    fit[good] = (s2[good] * t0[good] - s1[good] * t1[good]) / det[good]
    return fit, ok


def loclin_1d(x: np.ndarray, y: np.ndarray, w: np.ndarray, h: float,
              xout: np.ndarray) -> np.ndarray:
    """Local-linear fit of scatter ``(x, y, w)`` evaluated at ``xout``.

    Array-level core used throughout the package; the bandwidth is widened
    locally where the neighborhood is degenerate.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    xout = np.asarray(xout, dtype=float)
    fit, ok = _loclin_1d_pass(x, y, w, h, xout)
    attempt = 0
    while not np.all(ok):
        if attempt >= WIDEN_ATTEMPTS:
            raise SmoothingError(
                f"degenerate 1-d neighborhood at {xout[~ok][:5]} after widening "
                f"bandwidth {h} by 2^{WIDEN_ATTEMPTS}"
            )
        attempt += 1
        bad = ~ok
        retry, retry_ok = _loclin_1d_pass(x, y, w, h * 2.0 ** attempt, xout[bad])
        fit[bad] = retry
        ok[bad] = retry_ok
    return fit


def local_linear_smooth_1d(xs, ys, weights, h: float,
                           eval_grid: TimeGrid) -> SampledCurve:
    """Smooth a weighted scatter onto a grid with a local-linear fit.

    Parameters
    ----------
    xs, ys, weights : array-like
        Scatter locations, responses and nonnegative weights (same length,
        at least 2 points).
    h : float
        Bandwidth (standard deviation of the truncated Gaussian kernel).
    eval_grid : TimeGrid
        Evaluation locations.

    Returns
    -------
    SampledCurve
        Fitted intercepts on ``eval_grid``.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (xs.shape == ys.shape == weights.shape) or xs.size < 2:
        raise ValueError("xs, ys, weights must share a length of at least 2")
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    fit = loclin_1d(xs, ys, weights, h, eval_grid.points)
    return SampledCurve(eval_grid, fit)


def _plane_solve(s00, s10, s01, s20, s11, s02, t00, t10, t01):
    """Solve the stacked 3x3 local-plane normal equations; returns (fit, ok)."""
    lhs = np.stack(
        [
            np.stack([s00, s10, s01], axis=-1),
            np.stack([s10, s20, s11], axis=-1),
            np.stack([s01, s11, s02], axis=-1),
        ],
        axis=-2,
    )
    rhs = np.stack([t00, t10, t01], axis=-1)[..., None]
    det = np.linalg.det(lhs)
    scale = s00 * s20 * s02
    ok = det > _DET_RTOL * np.maximum(scale, 1e-300)
    fit = np.zeros_like(s00)
    if np.any(ok):
        sol = np.linalg.solve(lhs[ok], rhs[ok])
        fit[ok] = sol[:, 0, 0]
    return fit, ok


def _loclin_2d_grid_pass(s_pts, t_pts, value, weight, hs, ht, sout, tout):
    """Local-plane fit for a full-grid scatter with per-cell weights.

    Every normal-equation moment is a bilinear form in kernel-moment
    vectors, so the whole evaluation grid reduces to nine small matrix
    products regardless of the number of cells.
    """
    us = (sout[:, None] - s_pts[None, :]) / hs
    ut = (tout[:, None] - t_pts[None, :]) / ht
    a0 = _kernel(us)
    a1 = a0 * us
    a2 = a1 * us
    b0 = _kernel(ut)
    b1 = b0 * ut
    b2 = b1 * ut
    m = weight
    nmat = weight * value
    s00 = a0 @ m @ b0.T
    s10 = a1 @ m @ b0.T
    s01 = a0 @ m @ b1.T
    s20 = a2 @ m @ b0.T
    s11 = a1 @ m @ b1.T
    s02 = a0 @ m @ b2.T
    t00 = a0 @ nmat @ b0.T
    t10 = a1 @ nmat @ b0.T
    t01 = a0 @ nmat @ b1.T
    npos_s = (a0 > 0).astype(float)
    npos_t = (b0 > 0).astype(float)
    support = npos_s @ (m > 0).astype(float) @ npos_t.T
    fit, ok = _plane_solve(s00, s10, s01, s20, s11, s02, t00, t10, t01)
    ok &= support >= 3
    return fit, ok


def loclin_2d_grid(s_pts, t_pts, value, weight, hs, ht, sout, tout):
    """Gridded local-plane smoother with bandwidth widening.

    ``value``/``weight`` are (len(s_pts), len(t_pts)) cell matrices; cells
    with zero weight are ignored (used to exclude the raw-product diagonal).
    """
    fit, ok = _loclin_2d_grid_pass(s_pts, t_pts, value, weight, hs, ht, sout, tout)
    attempt = 0
    while not np.all(ok):
        if attempt >= WIDEN_ATTEMPTS:
            raise SmoothingError(
                "degenerate 2-d neighborhood after bandwidth widening"
            )
        attempt += 1
        factor = 2.0 ** attempt
        retry, retry_ok = _loclin_2d_grid_pass(
            s_pts, t_pts, value, weight, hs * factor, ht * factor, sout, tout
        )
        bad = ~ok
        fit[bad] = retry[bad]
        ok[bad] = retry_ok[bad]
    return fit


def local_linear_smooth_2d(points, h: tuple[float, float], eval_grid_s: TimeGrid,
                           eval_grid_t: TimeGrid) -> Surface:
    """Fit a locally weighted plane to a 2-D scatter and return intercepts.

    Parameters
    ----------
    points : array-like of shape (n, 4)
        Rows ``(s, t, value, weight)``.
    h : (float, float)
        Bandwidth pair ``(h_s, h_t)``.
    eval_grid_s, eval_grid_t : TimeGrid
        Tensor evaluation grid.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 4 or pts.shape[0] < 3:
        raise ValueError("points must be an (n >= 3, 4) array of (s, t, value, weight)")
    hs, ht = float(h[0]), float(h[1])
    if hs <= 0 or ht <= 0:
        raise ValueError("bandwidths must be positive")
    s, t, v, w = pts.T
    sout = eval_grid_s.points
    tout = eval_grid_t.points

    def one_pass(hs_, ht_, srows, trows):
        us = (srows[:, None] - s[None, :]) / hs_
        ks = _kernel(us)
        fit = np.zeros((srows.size, trows.size))
        ok = np.zeros(fit.shape, dtype=bool)
        for i in range(srows.size):
            ut = (trows[:, None] - t[None, :]) / ht_
            k = ks[i][None, :] * _kernel(ut) * w[None, :]
            du = np.broadcast_to(us[i], ut.shape)
            s00 = k.sum(axis=1)
            s10 = (k * du).sum(axis=1)
            s01 = (k * ut).sum(axis=1)
            s20 = (k * du * du).sum(axis=1)
            s11 = (k * du * ut).sum(axis=1)
            s02 = (k * ut * ut).sum(axis=1)
            t00 = k @ v
            t10 = (k * du) @ v
            t01 = (k * ut) @ v
            row_fit, row_ok = _plane_solve(s00, s10, s01, s20, s11, s02, t00, t10, t01)
            row_ok &= np.count_nonzero(k > 0, axis=1) >= 3
            fit[i] = row_fit
            ok[i] = row_ok
        return fit, ok

    fit, ok = one_pass(hs, ht, sout, tout)
    attempt = 0
    while not np.all(ok):
        if attempt >= WIDEN_ATTEMPTS:
            raise SmoothingError("degenerate 2-d neighborhood after bandwidth widening")
        attempt += 1
        factor = 2.0 ** attempt
        retry, retry_ok = one_pass(hs * factor, ht * factor, sout, tout)
        bad = ~ok
        fit[bad] = retry[bad]
        ok[bad] = retry_ok[bad]
    return Surface(eval_grid_s, eval_grid_t, fit)


def _fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=int)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        labels[chunk] = f
    return labels


def cv_errors(xs, ys, candidate_bandwidths, folds: int = 10, weights=None,
              seed: int = 0) -> np.ndarray:
    """Mean squared out-of-fold prediction error per candidate bandwidth.

    Training scatters are collapsed onto their distinct locations before
    smoothing; the local-linear normal equations are unchanged by that
    collapse, so the returned errors equal the raw point-by-point K-fold
    errors.  Candidates whose smoothing fails on some fold get ``inf``.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n = xs.size
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    candidates = np.asarray(candidate_bandwidths, dtype=float)
    fold_of = _fold_assignment(n, folds, seed)
    uniq, inv = np.unique(xs, return_inverse=True)
    ncells = uniq.size
    errors = np.zeros(candidates.size)
    total_w = np.zeros(candidates.size)
    for f in range(folds):
        held = fold_of == f
        if not np.any(held) or np.all(held):
            continue
        keep = ~held
        cell_w = np.bincount(inv[keep], weights=weights[keep], minlength=ncells)
        cell_wy = np.bincount(inv[keep], weights=(weights * ys)[keep], minlength=ncells)
        active = cell_w > 0
        if np.count_nonzero(active) < 2:
            errors[:] = np.inf
            continue
        train_x = uniq[active]
        train_y = cell_wy[active] / cell_w[active]
        train_w = cell_w[active]
        out_cells = np.unique(inv[held])
        for ci, h in enumerate(candidates):
            if not np.isfinite(errors[ci]):
                continue
            try:
                pred_cells = loclin_1d(train_x, train_y, train_w, h, uniq[out_cells])
            except SmoothingError:
                errors[ci] = np.inf
                continue
            lookup = np.zeros(ncells)
            lookup[out_cells] = pred_cells
            resid = ys[held] - lookup[inv[held]]
            errors[ci] += float(np.dot(weights[held], resid * resid))
            total_w[ci] += float(weights[held].sum())
    with np.errstate(invalid="ignore"):
        out = np.where(np.isfinite(errors), errors / np.maximum(total_w, 1e-300), np.inf)
    return out


def _pick_candidate(candidates: np.ndarray, errors: np.ndarray,
                    scale: float) -> float:
    if not np.any(np.isfinite(errors)):
        raise BandwidthSelectionError(
            f"all candidate bandwidths failed cross-validation: {list(candidates)}"
        )
    best = np.min(errors[np.isfinite(errors)])
    # anchor the tie window to the response scale so exactly-fitted data
    # (errors at float-noise level) still ties toward the largest bandwidth
    tol = CV_TIE_RTOL * max(best, scale, 1e-300)
    tied = np.isfinite(errors) & (errors <= best + tol)
    return float(np.max(candidates[tied]))


def select_bandwidth_cv(xs, ys, candidate_bandwidths, folds: int = 10,
                        weights=None, seed: int = 0) -> float:
    """Pick the candidate bandwidth minimizing K-fold prediction error.

    Deterministic given ``seed`` (which fixes the fold assignment); ties
    within ``1e-12`` relative error resolve to the largest bandwidth.
    """
    candidates = np.asarray(candidate_bandwidths, dtype=float)
    if candidates.size == 0:
        raise ValueError("candidate bandwidth list is empty")
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if np.asarray(xs).size < folds:
        raise ValueError("data size must be at least the number of folds")
    errors = cv_errors(xs, ys, candidates, folds=folds, weights=weights, seed=seed)
    y_arr = np.asarray(ys, dtype=float)
    w_arr = np.ones(y_arr.size) if weights is None else np.asarray(weights, dtype=float)
    scale = float(np.average(np.square(y_arr), weights=w_arr)) if y_arr.size else 0.0
    return _pick_candidate(candidates, errors, scale)


def select_bandwidth_cv_2d(s_pts, t_pts, value_by_fold, weight_by_fold,
                           within_ss, candidate_bandwidths) -> float:
    """K-fold bandwidth choice for the gridded plane smoother.

    ``value_by_fold``/``weight_by_fold`` are (folds, ns, nt) stacks of
    per-fold cell means and weights (raw scatter points pre-assigned to
    folds and collapsed per cell).  ``within_ss`` is the bandwidth-free
    within-cell sum of squares, added so the reported error matches the
    raw-point K-fold error exactly.
    """
    candidates = np.asarray(candidate_bandwidths, dtype=float)
    folds = weight_by_fold.shape[0]
    w_total = weight_by_fold.sum(axis=0)
    wy_total = (weight_by_fold * value_by_fold).sum(axis=0)
    errors = np.full(candidates.size, within_ss, dtype=float)
    total_w = np.full(candidates.size, weight_by_fold.sum())
    for f in range(folds):
        w_train = w_total - weight_by_fold[f]
        with np.errstate(invalid="ignore", divide="ignore"):
            v_train = np.where(
                w_train > 0, (wy_total - weight_by_fold[f] * value_by_fold[f]) / np.maximum(w_train, 1e-300), 0.0
            )
        held_w = weight_by_fold[f]
        held_v = value_by_fold[f]
        for ci, h in enumerate(candidates):
            if not np.isfinite(errors[ci]):
                continue
            try:
                pred = loclin_2d_grid(s_pts, t_pts, v_train, w_train, h, h, s_pts, t_pts)
            except SmoothingError:
                errors[ci] = np.inf
                continue
            resid = held_v - pred
            errors[ci] += float(np.sum(held_w * resid * resid))
    with np.errstate(invalid="ignore"):
        errors = np.where(np.isfinite(errors), errors / np.maximum(total_w, 1e-300), np.inf)
    total = weight_by_fold.sum()
    scale = float((weight_by_fold * np.square(value_by_fold)).sum() / max(total, 1e-300))
    return _pick_candidate(candidates, errors, scale)
