"""Prediction of the unobserved remainder of a partially observed curve.

Per cluster, principal-component scores of the observed segment predict
the scores of the future segment through per-pair simple linear
regressions whose coefficients are normalized by the observed-block
eigenvalues and then smoothed over the split time.  The mixture predictor
combines the per-cluster conditional predictions with posterior membership
weights (soft) or with the argmax indicator (hard).

A baseline treats the future segment as missing data instead: full-domain
scores are imputed by the Gaussian conditional expectation given the
observed segment (noise-regularized block inversion with quadrature
weighting) and plugged into the truncated expansion.

Bootstrap prediction bands resample training curves within clusters,
refit the regression per replicate and add score-residual and measurement
noise draws.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .classify import LogitCoefficients, classify_partial
from .clustering import ClusteringResult
from .config import PipelineConfig
from .errors import FlowmixError, IntervalFailureError, PredictionError
from .fpca import ClusterModel, SubdomainModel, restrict_model
from .grids import SampledCurve, TimeGrid, curve_matrix
from .smoothing import default_bandwidths, loclin_1d, select_bandwidth_cv

NEAR_SINGULAR_EIGENVALUE = 1e-12

FULL_PAST = "full"


def _omega_key(omega: float | None) -> float | str:
    return FULL_PAST if omega is None else round(float(omega), 9)


@dataclass
class RegressionCoefficients:
    """Score-regression coefficients per cluster over the split-time grid.

    ``raw[c]`` and ``smoothed[c]`` are (Q, M_c, M_c) arrays indexed
    (tau, future component k, observed component j); entries outside the
    per-block component counts at a given tau are zero.
    """

    tau_grid: np.ndarray
    raw: list[np.ndarray]
    smoothed: list[np.ndarray]
    omega: float | None = None

    def at(self, cluster_index: int, tau: float) -> np.ndarray:
        q = int(np.argmin(np.abs(self.tau_grid - tau)))
        if abs(self.tau_grid[q] - tau) > 1e-9:
            raise PredictionError(f"tau={tau} is not on the prediction-time grid")
        return self.smoothed[cluster_index][q]


@dataclass
class MixtureModel:
    """The assembled classification-plus-prediction machine."""

    grid: TimeGrid
    clusters: list[ClusterModel]
    gamma: LogitCoefficients
    betas: dict
    tau_grid: np.ndarray
    config: PipelineConfig = field(default_factory=PipelineConfig)
    gamma_by_tau: dict | None = None
    training_distances: np.ndarray | None = None
    training_labels: np.ndarray | None = None
    _subdomains: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def subdomains(self, tau: float, omega: float | None = None) -> list[SubdomainModel]:
        key = (round(float(tau), 9), _omega_key(omega))
        cached = self._subdomains.get(key)
        if cached is None:
            cached = [restrict_model(m, tau, omega=omega) for m in self.clusters]
            self._subdomains[key] = cached
        return cached

    def gamma_at(self, tau: float) -> LogitCoefficients:
        if self.gamma_by_tau:
            key = round(float(tau), 9)
            if key in self.gamma_by_tau:
                return self.gamma_by_tau[key]
        return self.gamma

    def betas_for(self, omega: float | None) -> RegressionCoefficients:
        key = _omega_key(omega)
        if key not in self.betas:
            raise PredictionError(
                f"no regression coefficients fitted for window length {omega}"
            )
        return self.betas[key]


@dataclass
class Prediction:
    """Predicted future trajectory with its ingredients."""

    tau: float
    grid: TimeGrid
    mixture_curve: np.ndarray
    per_cluster: list[np.ndarray]
    posterior: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    band_level: float | None = None
    method: str = "FMP_S"

    def curve(self) -> SampledCurve:
        return SampledCurve(self.grid, self.mixture_curve)


def infer_window(partial_curve: SampledCurve, mixture_grid: TimeGrid,
                 tau: float) -> float | None:
    """Observed-window length implied by a partial curve's grid (None when
    the curve starts at the beginning of the full grid)."""
    start = float(partial_curve.grid.points[0])
    if abs(start - float(mixture_grid.points[0])) <= 1e-9:
        return None
    return float(tau - start)


def fit_beta(result: ClusteringResult, tau_grid: np.ndarray,
             omega: float | None = None) -> RegressionCoefficients:
    """Raw score-regression coefficients for every cluster and split time.

    For each (tau, future index k, observed index j) the coefficient is
    the centered cross-moment of the training scores divided by
    ``(n_c - 1)`` times the observed-block eigenvalue; eigenvalues below
    ``1e-12`` give zero coefficients (flagged by a warning).
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    raw = []
    near_singular = 0
    for model in result.models:
        members = np.nonzero(result.membership.assignments == model.label)[0]
        _, ymat = curve_matrix([result.curves[i] for i in members])
        n_c = ymat.shape[0]
        m_c = model.num_components
        coef = np.zeros((tau_grid.size, m_c, m_c))
        for q, tau in enumerate(tau_grid):
            sub = restrict_model(model, tau, omega=omega)
            xs = sub.observed.scores(ymat[:, sub.observed.indices],
                                     count=sub.observed.num_regression)
            xt = sub.future.scores(ymat[:, sub.future.indices],
                                   count=sub.future.num_regression)
            lam_s = sub.observed.eigenvalues[: xs.shape[1]]
            xs_c = xs - xs.mean(axis=0, keepdims=True)
            xt_c = xt - xt.mean(axis=0, keepdims=True)
            cross = xt_c.T @ xs_c  # (Mt, Ms)
            with np.errstate(divide="ignore", invalid="ignore"):
                beta = cross / ((n_c - 1) * lam_s[None, :])
            tiny = lam_s < NEAR_SINGULAR_EIGENVALUE
            if np.any(tiny):
                near_singular += int(np.count_nonzero(tiny))
                beta[:, tiny] = 0.0
            coef[q, : beta.shape[0], : beta.shape[1]] = beta
        raw.append(coef)
    if near_singular:
        warnings.warn(
            f"{near_singular} near-singular observed-block eigenvalues; "
            f"those coefficients were set to zero"
        )
    return RegressionCoefficients(tau_grid, raw, [c.copy() for c in raw], omega)


def smooth_beta(coefficients: RegressionCoefficients, folds: int = 10,
                seed: int = 0) -> RegressionCoefficients:
    """Smooth every coefficient series over the split time.

    Each (cluster, k, j) series gets its own cross-validated local-linear
    smooth; failures fall back to the raw series.
    """
    tau = coefficients.tau_grid
    if tau.size < 4:
        raise ValueError("smoothing over the split time needs at least 4 points")
    step = float(np.median(np.diff(tau)))
    candidates = default_bandwidths(step)
    ones = np.ones(tau.size)
    smoothed = []
    for coef in coefficients.raw:
        out = coef.copy()
        for k in range(coef.shape[1]):
            for j in range(coef.shape[2]):
                series = coef[:, k, j]
                if np.allclose(series, series[0], rtol=0.0, atol=0.0):
                    continue
                try:
                    h = select_bandwidth_cv(tau, series, candidates,
                                            folds=folds, seed=seed)
                    out[:, k, j] = loclin_1d(tau, series, ones, h, tau)
                except FlowmixError:
                    warnings.warn(
                        f"coefficient smoothing failed for (k={k + 1}, j={j + 1}); "
                        f"keeping the raw series"
                    )
        smoothed.append(out)
    return RegressionCoefficients(tau, coefficients.raw, smoothed,
                                  coefficients.omega)


def _conditional_values(values: np.ndarray, sub: SubdomainModel,
                        beta: np.ndarray) -> np.ndarray:
    """Per-cluster conditional prediction of the future segment values."""
    xs = sub.observed.scores(values, count=sub.observed.num_regression)
    m_t = sub.future.num_regression
    pred_scores = beta[:m_t, : xs.size] @ xs
    return sub.future.mean + pred_scores @ sub.future.eigenfunctions[:m_t]


def predict_conditional(partial_curve: SampledCurve, mixture: MixtureModel,
                        cluster: int, tau: float) -> SampledCurve:
    """Predicted future trajectory conditional on one cluster.

    ``cluster`` is the 1-based cluster label.  The partial curve must be
    sampled on the observed subgrid ending at ``tau``.
    """
    omega = infer_window(partial_curve, mixture.grid, tau)
    sub = mixture.subdomains(tau, omega)[cluster - 1]
    if not partial_curve.grid.matches(sub.observed.grid):
        raise PredictionError("partial curve is not sampled on the observed subgrid")
    beta = mixture.betas_for(omega).at(cluster - 1, tau)
    values = _conditional_values(partial_curve.values, sub, beta)
    return SampledCurve(sub.future.grid, values)


def _combine(per_cluster: list[np.ndarray], posterior: np.ndarray,
             mode: str) -> tuple[np.ndarray, np.ndarray]:
    if mode not in ("soft", "hard"):
        raise ValueError("mode must be 'soft' or 'hard'")
    weights = posterior
    if mode == "hard":
        weights = np.zeros_like(posterior)
        weights[int(np.argmax(posterior))] = 1.0
    stacked = np.stack(per_cluster)
    return weights @ stacked, weights


def predict_mixture(partial_curve: SampledCurve, mixture: MixtureModel,
                    tau: float, mode: str = "soft") -> Prediction:
    """Mixture prediction of the future segment.

    Soft mode weights the per-cluster conditional predictions by the
    posterior membership probabilities; hard mode uses the argmax
    indicator.  A single cluster reduces both to the conditional
    prediction exactly.
    """
    omega = infer_window(partial_curve, mixture.grid, tau)
    subs = mixture.subdomains(tau, omega)
    posterior = classify_partial(partial_curve, mixture, tau)
    betas = mixture.betas_for(omega)
    per_cluster = [
        _conditional_values(partial_curve.values, sub, betas.at(c, tau))
        for c, sub in enumerate(subs)
    ]
    combined, _ = _combine(per_cluster, posterior, mode)
    return Prediction(
        tau=tau, grid=subs[0].future.grid, mixture_curve=combined,
        per_cluster=per_cluster, posterior=posterior,
        method="FMP_S" if mode == "soft" else "FMP_H",
    )


def _fpcp_scores(values: np.ndarray, model: ClusterModel,
                 sub: SubdomainModel) -> np.ndarray:
    """Full-domain score estimates by Gaussian conditioning on the
    observed segment (noise-regularized, quadrature-weighted)."""
    idx = sub.observed.indices
    w = sub.observed.grid.weights
    sqw = np.sqrt(w)
    b = sqw[:, None] * model.covariance[np.ix_(idx, idx)] * sqw[None, :]
    b = 0.5 * (b + b.T)
    a = b + max(model.noise_variance, 0.0) * np.eye(idx.size)
    rhs = sqw * (values - model.mean[idx])
    try:
        chol = scipy.linalg.cho_factor(a, check_finite=False)
        z = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        bump = 1e-8 * float(np.trace(a))
        warnings.warn(
            f"ill-conditioned observed-block system; adding ridge {bump:.3e}"
        )
        a = a + bump * np.eye(idx.size)
        z = scipy.linalg.solve(a, rhs, assume_a="sym", check_finite=False)
    m_c = model.num_components
    phi_obs = model.eigenfunctions[:m_c][:, idx]
    return model.eigenvalues[:m_c] * (phi_obs * sqw[None, :]) @ z


def _fpcp_values(values: np.ndarray, model: ClusterModel,
                 sub: SubdomainModel) -> np.ndarray:
    scores = _fpcp_scores(values, model, sub)
    idx_t = sub.future.indices
    phi_t = model.eigenfunctions[: model.num_components][:, idx_t]
    return model.mean[idx_t] + scores @ phi_t


def predict_fpcp(partial_curve: SampledCurve, mixture: MixtureModel, tau: float,
                 mode: str = "soft", cluster: int | None = None) -> Prediction:
    """Score-imputation baseline: treat the future segment as missing.

    Full-domain scores are estimated from the observed segment by
    Gaussian conditional expectation and plugged into the full-domain
    expansion restricted to the future segment.  With ``cluster`` the
    prediction conditions on that cluster alone; otherwise per-cluster
    predictions are combined exactly as in :func:`predict_mixture`.
    """
    omega = infer_window(partial_curve, mixture.grid, tau)
    subs = mixture.subdomains(tau, omega)
    if not partial_curve.grid.matches(subs[0].observed.grid):
        raise PredictionError("partial curve is not sampled on the observed subgrid")
    per_cluster = [
        _fpcp_values(partial_curve.values, model, sub)
        for model, sub in zip(mixture.clusters, subs)
    ]
    if cluster is not None:
        one = per_cluster[cluster - 1]
        posterior = np.zeros(mixture.n_clusters)
        posterior[cluster - 1] = 1.0
        return Prediction(tau=tau, grid=subs[0].future.grid, mixture_curve=one,
                          per_cluster=per_cluster, posterior=posterior,
                          method="FPCP")
    posterior = classify_partial(partial_curve, mixture, tau)
    combined, _ = _combine(per_cluster, posterior, mode)
    return Prediction(
        tau=tau, grid=subs[0].future.grid, mixture_curve=combined,
        per_cluster=per_cluster, posterior=posterior,
        method="FPCP_S" if mode == "soft" else "FPCP_H",
    )


def _training_assignments(mixture: MixtureModel, ymat: np.ndarray) -> np.ndarray:
    from .classify import distance_covariates, posterior_matrix
    from .clustering import _relative_matrix, _residual_matrix

    if mixture.n_clusters == 1:
        return np.ones(ymat.shape[0], dtype=int)
    distances = _relative_matrix(_residual_matrix(ymat, mixture.clusters))
    post = posterior_matrix(distance_covariates(distances), mixture.gamma)
    return post.argmax(axis=1) + 1


def bootstrap_interval(partial_curve: SampledCurve, mixture: MixtureModel,
                       training_curves: list[SampledCurve], tau: float,
                       b: int = 500, level: float = 0.95,
                       labels: np.ndarray | None = None, mode: str = "soft",
                       resample_gamma: bool | None = None,
                       seed: int = 0) -> tuple[SampledCurve, SampledCurve]:
    """Pointwise bootstrap prediction band for the future segment.

    Training curves are resampled with replacement within clusters and the
    score regression is refitted per replicate at the target split time;
    each replicate prediction additionally draws a score-regression
    residual curve (from a posterior-sampled cluster) and measurement
    noise.  The returned band brackets the point prediction.
    """
    if b < 100:
        raise ValueError("bootstrap band needs at least 100 replicates")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if resample_gamma is None:
        resample_gamma = mixture.config.resample_gamma_in_bands
    omega = infer_window(partial_curve, mixture.grid, tau)
    subs = mixture.subdomains(tau, omega)
    point = predict_mixture(partial_curve, mixture, tau, mode=mode)
    posterior = point.posterior
    _, ymat = curve_matrix(training_curves)
    if labels is None:
        labels = _training_assignments(mixture, ymat)
    labels = np.asarray(labels, dtype=int)

    k = mixture.n_clusters
    betas = mixture.betas_for(omega)
    cluster_data = []
    for c in range(k):
        members = ymat[labels == c + 1]
        sub = subs[c]
        xs = sub.observed.scores(members[:, sub.observed.indices],
                                 count=sub.observed.num_regression)
        xt = sub.future.scores(members[:, sub.future.indices],
                               count=sub.future.num_regression)
        beta_hat = betas.at(c, tau)[: xt.shape[1], : xs.shape[1]]
        resid = xt - xs @ beta_hat.T
        resid = resid - resid.mean(axis=0, keepdims=True)
        lam_s = sub.observed.eigenvalues[: xs.shape[1]]
        cluster_data.append((xs, xt, lam_s, resid))
    new_scores = [
        sub.observed.scores(partial_curve.values,
                            count=sub.observed.num_regression)
        for sub in subs
    ]

    rng = np.random.default_rng([seed, 97])
    n_t = subs[0].future.grid.n
    samples = np.empty((b, n_t))
    successes = 0
    for rep in range(b):
        try:
            per_cluster = []
            for c in range(k):
                xs, xt, lam_s, _ = cluster_data[c]
                n_c = xs.shape[0]
                if n_c == 0:
                    per_cluster.append(subs[c].future.mean)
                    continue
                pick = rng.integers(0, n_c, size=n_c)
                xs_b = xs[pick] - xs[pick].mean(axis=0, keepdims=True)
                xt_b = xt[pick] - xt[pick].mean(axis=0, keepdims=True)
                with np.errstate(divide="ignore", invalid="ignore"):
                    beta_b = (xt_b.T @ xs_b) / (max(n_c - 1, 1) * lam_s[None, :])
                beta_b[:, lam_s < NEAR_SINGULAR_EIGENVALUE] = 0.0
                pred_scores = beta_b @ new_scores[c]
                m_t = pred_scores.size
                per_cluster.append(
                    subs[c].future.mean
                    + pred_scores @ subs[c].future.eigenfunctions[:m_t]
                )
            weights = posterior
            if resample_gamma:
                weights = _resampled_posterior(mixture, partial_curve, tau, rng)
            combined, _ = _combine(per_cluster, weights, mode)
            pick_c = int(rng.choice(k, p=posterior))
            resid_pool = cluster_data[pick_c][3]
            if resid_pool.shape[0]:
                row = resid_pool[rng.integers(0, resid_pool.shape[0])]
                combined = combined + row @ subs[pick_c].future.eigenfunctions[:row.size]
            sigma = np.sqrt(max(mixture.clusters[pick_c].noise_variance, 0.0))
            samples[successes] = combined + rng.normal(0.0, sigma, size=n_t)
            successes += 1
        except FlowmixError:
            continue
    if successes < 0.8 * b:
        raise IntervalFailureError(
            f"only {successes}/{b} bootstrap replicates succeeded"
        )
    used = samples[:successes]
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(used, alpha, axis=0)
    upper = np.quantile(used, 1.0 - alpha, axis=0)
    lower = np.minimum(lower, point.mixture_curve)
    upper = np.maximum(upper, point.mixture_curve)
    grid = subs[0].future.grid
    return SampledCurve(grid, lower), SampledCurve(grid, upper)


def _resampled_posterior(mixture: MixtureModel, partial_curve: SampledCurve,
                         tau: float, rng: np.random.Generator) -> np.ndarray:
    """Posterior under coefficients refitted on a resampled training set.

    Requires the mixture to retain training distances; falls back to the
    fitted posterior when they are unavailable.
    """
    from .classify import distance_covariates, fit_logit, partial_distances, posterior

    distances = mixture.training_distances
    train_labels = mixture.training_labels
    if distances is None or train_labels is None:
        return classify_partial(partial_curve, mixture, tau)
    n = distances.shape[0]
    pick = rng.integers(0, n, size=n)
    labels_b = train_labels[pick]
    if np.unique(labels_b).size < mixture.n_clusters:
        return classify_partial(partial_curve, mixture, tau)
    gamma_b = fit_logit(distance_covariates(distances[pick]), labels_b,
                        ridge=mixture.config.ridge)
    omega = infer_window(partial_curve, mixture.grid, tau)
    d_new = partial_distances(partial_curve, mixture.subdomains(tau, omega))
    return posterior(distance_covariates(d_new)[0], gamma_b)
