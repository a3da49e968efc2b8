"""Multiclass logistic classification on subspace-projection distances.

The covariate for curve membership is the vector of relative L2 distances
to each cluster subspace (intercept plus the first K-1 distances; the last
is redundant because the distances sum to one).  Coefficients are fitted
once on complete training curves by a ridge-stabilized Newton/IRLS solver
and reused unchanged when classifying partially observed curves at any
current time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, TooEarlyError
from .fpca import BlockModel, SubdomainModel
from .grids import SampledCurve, l2_norm_sq

MAX_IRLS_ITERATIONS = 100
IRLS_TOL = 1e-9
SEPARATION_NORM = 1e4


@dataclass
class LogitCoefficients:
    """Fitted multiclass logit coefficients.

    ``gamma`` has one row per non-baseline class (the last class is the
    baseline with an implicit zero row); each row holds the intercept
    followed by the first K-1 distance coefficients.
    """

    gamma: np.ndarray
    n_classes: int
    converged: bool = True
    separation_flag: bool = False

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        expected = (self.n_classes - 1, self.n_classes)
        if self.n_classes > 1 and self.gamma.shape != expected:
            raise ValueError(f"gamma must have shape {expected}")


def distance_covariates(distances: np.ndarray) -> np.ndarray:
    """Build covariate rows (1, d_1, ..., d_{K-1}) from relative distances."""
    d = np.atleast_2d(np.asarray(distances, dtype=float))
    k = d.shape[1]
    return np.column_stack([np.ones(d.shape[0]), d[:, : k - 1]])


def _softmax_rows(eta: np.ndarray) -> np.ndarray:
    shifted = eta - eta.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    return p


def _class_probs(x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    eta = np.column_stack([x @ gamma.T, np.zeros(x.shape[0])])
    return _softmax_rows(eta)


def fit_logit(covariates: np.ndarray, labels: np.ndarray,
              ridge: float = 1e-6) -> LogitCoefficients:
    """Fit the multiclass logit by penalized Newton iterations.

    Parameters
    ----------
    covariates : np.ndarray of shape (n, K)
        Rows (1, d_1, ..., d_{K-1}) as built by :func:`distance_covariates`.
    labels : array of int
        Class labels in 1..K; class K is the baseline.
    ridge : float, default=1e-6
        L2 penalty on all coefficients; keeps the solver convergent under
        the (quasi-)separation that near-zero distances readily produce.

    Returns
    -------
    LogitCoefficients
        With ``converged=False`` (and a warning) if the likelihood change
        never fell below tolerance, and ``separation_flag`` set when the
        coefficient norm indicates separated classes held back by the
        ridge alone.
    """
    x = np.asarray(covariates, dtype=float)
    labels = np.asarray(labels, dtype=int)
    classes = np.unique(labels)
    k = int(classes.max())
    if classes.size < k or classes.min() < 1:
        raise ValueError("labels must cover 1..K with every class present")
    if k == 1:
        return LogitCoefficients(np.zeros((0, 1)), 1)
    if x.shape[1] != k:
        raise ValueError(f"covariate dimension {x.shape[1]} != number of classes {k}")
    n, p = x.shape
    onehot = np.zeros((n, k - 1))
    for c in range(k - 1):
        onehot[:, c] = labels == c + 1

    gamma = np.zeros((k - 1, p))

    def penalized_ll(g):
        eta = np.column_stack([x @ g.T, np.zeros(n)])
        shifted = eta - eta.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1)) + eta.max(axis=1)
        ll = float((eta[np.arange(n), labels - 1]).sum() - logz.sum())
        return ll - ridge * float(np.sum(g * g))

    ll = penalized_ll(gamma)
    converged = False
    for _ in range(MAX_IRLS_ITERATIONS):
        probs = _class_probs(x, gamma)[:, : k - 1]
        grad = x.T @ (onehot - probs) - 2.0 * ridge * gamma.T
        grad = grad.T.ravel()
        hess = np.zeros(((k - 1) * p, (k - 1) * p))
        for c in range(k - 1):
            for d in range(k - 1):
                w = probs[:, c] * ((c == d) - probs[:, d])
                block = -(x.T @ (x * w[:, None]))
                if c == d:
                    block -= 2.0 * ridge * np.eye(p)
                hess[c * p:(c + 1) * p, d * p:(d + 1) * p] = block
        try:
            step = np.linalg.solve(hess, -grad).reshape(k - 1, p)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, -grad, rcond=None)[0].reshape(k - 1, p)
        # damped update: halve until the penalized likelihood improves
        size = 1.0
        for _ in range(40):
            trial = gamma + size * step
            trial_ll = penalized_ll(trial)
            if trial_ll >= ll - 1e-14:
                break
            size *= 0.5
        gamma = gamma + size * step
        if abs(trial_ll - ll) < IRLS_TOL:
            ll = trial_ll
            converged = True
            break
        ll = trial_ll
    if not converged:
        warnings.warn("multiclass logit did not converge; returning best iterate")
    separated = bool(np.max(np.abs(gamma)) > SEPARATION_NORM)
    if separated:
        warnings.warn("coefficient norm suggests separated classes (ridge-bounded)")
    return LogitCoefficients(gamma, k, converged=converged,
                             separation_flag=separated)


def posterior(covariate: np.ndarray, coefficients: LogitCoefficients) -> np.ndarray:
    """Class-membership probabilities for one covariate vector.

    Softmax over the non-baseline scores and an implicit zero for the
    baseline; overflow-guarded and renormalized, so entries are positive
    and sum to one.
    """
    if coefficients.n_classes == 1:
        return np.ones(1)
    x = np.asarray(covariate, dtype=float).reshape(1, -1)
    if x.shape[1] != coefficients.gamma.shape[1]:
        raise ValueError("covariate dimension does not match coefficients")
    return _class_probs(x, coefficients.gamma)[0]


def posterior_matrix(covariates: np.ndarray,
                     coefficients: LogitCoefficients) -> np.ndarray:
    """Row-wise :func:`posterior` for a covariate matrix."""
    if coefficients.n_classes == 1:
        return np.ones((np.atleast_2d(covariates).shape[0], 1))
    return _class_probs(np.atleast_2d(covariates), coefficients.gamma)


def block_residuals(values: np.ndarray, blocks: list[BlockModel]) -> np.ndarray:
    """Squared projection residual of one curve against each block model."""
    out = np.empty(len(blocks))
    for i, block in enumerate(blocks):
        recon = block.reconstruct(block.scores(values))
        out[i] = l2_norm_sq(values - recon, block.grid.weights)
    return out


def relative_from_residuals(residuals: np.ndarray) -> np.ndarray:
    total = residuals.sum()
    if total <= 0.0:
        k = residuals.size
        warnings.warn("all projection residuals are zero; returning uniform distances")
        return np.full(k, 1.0 / k)
    return residuals / total


def partial_distances(partial_curve: SampledCurve,
                      subdomain_models: list[SubdomainModel]) -> np.ndarray:
    """Relative L2 distances of a partially observed curve.

    Norms and projections run on the observed subdomain only, against each
    cluster's restricted mean, eigenfunctions and per-block component
    count.  The result is nonnegative and sums to one.
    """
    if partial_curve.grid.n < 2:
        raise TooEarlyError("observed window holds fewer than 2 grid points")
    blocks = [m.observed for m in subdomain_models]
    for block in blocks:
        if not partial_curve.grid.matches(block.grid):
            raise GridMismatchError(
                "partial curve is not sampled on the observed subgrid"
            )
    return relative_from_residuals(block_residuals(partial_curve.values, blocks))


def classify_partial(partial_curve: SampledCurve, mixture, tau: float) -> np.ndarray:
    """Posterior membership probabilities from a partially observed curve.

    Uses the coefficients fitted on complete training curves (no refit at
    prediction time unless the mixture was built with per-tau refits).
    """
    if mixture.n_clusters == 1:
        return np.ones(1)
    subs = mixture.subdomains(tau, omega=_window_omega(partial_curve, mixture, tau))
    d = partial_distances(partial_curve, subs)
    gamma = mixture.gamma_at(tau)
    return posterior(distance_covariates(d)[0], gamma)


def _window_omega(partial_curve: SampledCurve, mixture, tau: float) -> float | None:
    """Infer the observed-window length from the partial curve's grid."""
    start = float(partial_curve.grid.points[0])
    full_start = float(mixture.grid.points[0])
    if abs(start - full_start) <= 1e-9:
        return None
    return float(tau - start)
