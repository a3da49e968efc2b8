"""Prediction-quality metrics and the multi-method comparison harness.

MIPE is the kappa-normalized mean integrated squared prediction error
over the future window; TMIPE integrates it over the split-time grid.
The comparison harness fills a (method x kappa x omega) table for the
mixture predictors (hard/soft/oracle-membership), the pooled single-
pattern predictor, and the score-imputation baselines.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .classify import classify_partial
from .config import PipelineConfig
from .errors import ConfigurationError, FlowmixError, PredictionError
from .fpca import ClusterModel, reconstruction
from .grids import SampledCurve, TimeGrid, curve_matrix, trapezoid_weights
from .predict import (
    FULL_PAST,
    MixtureModel,
    Prediction,
    _combine,
    _conditional_values,
    _fpcp_values,
    _omega_key,
    predict_fpcp,
    predict_mixture,
)

MIXTURE_METHODS = ("FMP_H", "FMP_S", "FMP_S*")
POOLED_METHODS = ("FP", "FPCP")
BASELINE_MIXTURE_METHODS = ("FPCP_H", "FPCP_S", "FPCP_S*")
ALL_METHODS = POOLED_METHODS + MIXTURE_METHODS + BASELINE_MIXTURE_METHODS


@dataclass(frozen=True)
class EvaluationWindow:
    """One (tau, omega, kappa) evaluation cell; None means full past/future."""

    tau: float
    omega: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.omega is not None and self.omega <= 0:
            raise ConfigurationError("omega must be positive")
        if self.kappa is not None and self.kappa <= 0:
            raise ConfigurationError("kappa must be positive")


def window_label(value: float | None, star: str) -> str:
    return star if value is None else f"{value:g}"


@dataclass
class MethodTable:
    """TMIPE per (method, kappa, omega), with optional standard errors."""

    methods: list[str]
    kappas: list[float | None]
    omegas: list[float | None]
    values: dict = field(default_factory=dict)
    std_errors: dict = field(default_factory=dict)

    @staticmethod
    def key(method: str, kappa: float | None, omega: float | None):
        return (method, window_label(kappa, "kappa*"), window_label(omega, "omega*"))

    def set(self, method, kappa, omega, value, se=None):
        self.values[self.key(method, kappa, omega)] = float(value)
        if se is not None:
            self.std_errors[self.key(method, kappa, omega)] = float(se)

    def get(self, method, kappa, omega) -> float:
        return self.values[self.key(method, kappa, omega)]

    def se(self, method, kappa, omega) -> float | None:
        return self.std_errors.get(self.key(method, kappa, omega))


def reconstruction_mipe(cluster_curves: list[SampledCurve],
                        model: ClusterModel) -> float:
    """Average time-normalized integrated squared reconstruction error."""
    if not cluster_curves:
        raise ValueError("reconstruction error needs at least one curve")
    grid = model.grid
    total = 0.0
    for curve in cluster_curves:
        if not curve.grid.matches(grid):
            raise PredictionError("curve grid does not match the model grid")
        diff = reconstruction(curve, model) - curve.values
        total += float(np.dot(grid.weights, diff * diff)) / grid.span
    return total / len(cluster_curves)


def _observed_slice(curve: SampledCurve, tau: float,
                    omega: float | None) -> SampledCurve:
    pts = curve.grid.points
    start = pts[0] if omega is None else max(pts[0], tau - omega)
    mask = (pts >= start - 1e-9) & (pts <= tau + 1e-9)
    return SampledCurve(TimeGrid(pts[mask], domain_end=curve.grid.domain_end),
                        curve.values[mask])


def _future_quadrature(grid: TimeGrid, tau: float,
                       kappa: float | None) -> tuple[np.ndarray, np.ndarray, float]:
    """Indices into the future grid and quadrature weights for [tau, end]."""
    pts = grid.points
    end = pts[-1] if kappa is None else min(tau + kappa, pts[-1])
    mask = pts <= end + 1e-9
    idx = np.nonzero(mask)[0]
    if idx.size < 2:
        raise PredictionError(f"future window [{tau}, {end}] holds fewer than 2 points")
    w = trapezoid_weights(pts[idx])
    return idx, w, float(pts[idx][-1] - pts[idx][0])


def _predict_by_method(method: str, partial: SampledCurve, mixture: MixtureModel,
                       tau: float, label: int | None) -> Prediction:
    if method == "FP":
        if mixture.n_clusters != 1:
            raise ConfigurationError("FP needs a pooled (single-cluster) mixture")
        return predict_mixture(partial, mixture, tau, mode="soft")
    if method == "FPCP":
        if mixture.n_clusters != 1:
            raise ConfigurationError("FPCP needs a pooled (single-cluster) mixture")
        return predict_fpcp(partial, mixture, tau, mode="soft")
    if method == "FMP_S":
        return predict_mixture(partial, mixture, tau, mode="soft")
    if method == "FMP_H":
        return predict_mixture(partial, mixture, tau, mode="hard")
    if method == "FMP_S*":
        if label is None:
            raise ConfigurationError(
                "oracle-membership prediction needs ground-truth labels"
            )
        pred = predict_mixture(partial, mixture, tau, mode="soft")
        oracle = np.zeros(mixture.n_clusters)
        oracle[label - 1] = 1.0
        combined, _ = _combine(pred.per_cluster, oracle, "soft")
        return replace_prediction(pred, combined, oracle, "FMP_S*")
    if method == "FPCP_S":
        return predict_fpcp(partial, mixture, tau, mode="soft")
    if method == "FPCP_H":
        return predict_fpcp(partial, mixture, tau, mode="hard")
    raise ConfigurationError(f"unknown method {method!r}")


def replace_prediction(pred: Prediction, curve: np.ndarray, posterior: np.ndarray,
                       method: str) -> Prediction:
    return Prediction(tau=pred.tau, grid=pred.grid, mixture_curve=curve,
                      per_cluster=pred.per_cluster, posterior=posterior,
                      method=method)


def mipe(method: str, test_curves: list[SampledCurve], mixture: MixtureModel,
         window: EvaluationWindow, labels=None) -> float:
    """Mean integrated prediction error for one evaluation window.

    Predictions use only the observed slice ``[max(0, tau-omega), tau]``;
    the squared error integrates over ``[tau, min(tau+kappa, T)]`` and is
    normalized by the window length.
    """
    if labels is not None and len(labels) != len(test_curves):
        raise ValueError("one label per test curve required")
    if _omega_key(window.omega) not in mixture.betas and not method.startswith("FPCP"):
        raise PredictionError(
            f"no regression coefficients for window length {window.omega}"
        )
    total = 0.0
    used = 0
    failures = 0
    for i, curve in enumerate(test_curves):
        label = None if labels is None else int(labels[i])
        try:
            partial = _observed_slice(curve, window.tau, window.omega)
            pred = _predict_by_method(method, partial, mixture, window.tau, label)
            idx, w, length = _future_quadrature(pred.grid, window.tau, window.kappa)
            truth_idx = np.searchsorted(curve.grid.points, pred.grid.points[idx])
            diff = pred.mixture_curve[idx] - curve.values[truth_idx]
            total += float(np.dot(w, diff * diff)) / length
            used += 1
        except (FlowmixError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            failures += 1
    if failures:
        warnings.warn(f"{failures} test curves failed prediction and were skipped")
    if used == 0:
        raise PredictionError("every test curve failed prediction")
    return total / used


def tmipe(method: str, test_curves: list[SampledCurve], mixture: MixtureModel,
          omega: float | None, kappa: float | None, tau_grid: np.ndarray,
          labels=None) -> float:
    """Trapezoid integral of MIPE over the split-time grid."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    values = [
        mipe(method, test_curves, mixture,
             EvaluationWindow(tau, omega, kappa), labels=labels)
        for tau in tau_grid
    ]
    return float(np.trapezoid(values, tau_grid))


class _FpcpCache:
    """Per-(window, cluster) factorization of the observed-block system."""

    def __init__(self):
        self._items = {}

    def values(self, model: ClusterModel, sub, partial_values: np.ndarray,
               key) -> np.ndarray:
        entry = self._items.get(key)
        if entry is None:
            idx = sub.observed.indices
            w = sub.observed.grid.weights
            sqw = np.sqrt(w)
            b = sqw[:, None] * model.covariance[np.ix_(idx, idx)] * sqw[None, :]
            b = 0.5 * (b + b.T)
            a = b + max(model.noise_variance, 0.0) * np.eye(idx.size)
            try:
                solver = scipy.linalg.cho_factor(a, check_finite=False)
                kind = "chol"
            except scipy.linalg.LinAlgError:
                a = a + 1e-8 * float(np.trace(a)) * np.eye(idx.size)
                solver = a
                kind = "dense"
            m_c = model.num_components
            phi_obs = model.eigenfunctions[:m_c][:, idx] * sqw[None, :]
            phi_t = model.eigenfunctions[:m_c][:, sub.future.indices]
            entry = (solver, kind, sqw, phi_obs, phi_t, model.eigenvalues[:m_c])
            self._items[key] = entry
        solver, kind, sqw, phi_obs, phi_t, lam = entry
        idx = sub.observed.indices
        rhs = sqw * (partial_values - model.mean[idx])
        if kind == "chol":
            z = scipy.linalg.cho_solve(solver, rhs, check_finite=False)
        else:
            z = scipy.linalg.solve(solver, rhs, assume_a="sym", check_finite=False)
        scores = lam * (phi_obs @ z)
        return model.mean[sub.future.indices] + scores @ phi_t


def compare_methods(train_curves: list[SampledCurve],
                    test_curves: list[SampledCurve],
                    config: PipelineConfig,
                    pipeline=None, test_labels=None,
                    omegas=None, kappas=None, methods=None) -> MethodTable:
    """Fill the full (method x kappa x omega) TMIPE grid.

    The pooled single-pattern predictors refit the pipeline with one
    cluster (reusing the fitted mixture when it already has one cluster,
    which makes the pooled and mixture rows coincide exactly).  The
    oracle-membership row substitutes the known cluster labels and
    requires ``test_labels`` in fitted-label space.
    """
    from .pipeline import fit_mixture, fit_window_betas

    methods = list(methods if methods is not None else config.methods)
    omegas = list(config.omegas if omegas is None else omegas)
    kappas = list(config.kappas if kappas is None else kappas)
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ConfigurationError(f"unknown methods requested: {unknown}")
    if ("FMP_S*" in methods or "FPCP_S*" in methods) and test_labels is None:
        raise ConfigurationError(
            "oracle-membership prediction requested without ground-truth labels"
        )
    if pipeline is None:
        pipeline = fit_mixture(train_curves, config)
    mixture = pipeline.mixture
    clustering = pipeline.clustering

    pooled_pipeline = pipeline
    if mixture.n_clusters > 1 and any(m in POOLED_METHODS for m in methods):
        pooled_pipeline = fit_mixture(train_curves, replace(config, n_clusters=1))
    pooled = pooled_pipeline.mixture

    tau_grid = config.tau_grid
    fpcp_cache = _FpcpCache()
    table = MethodTable(methods, kappas, omegas)
    # accumulated squared-error integrals: method -> (n_tau, n_kappa)
    for omega in omegas:
        need_mix_beta = any(m.startswith("FMP") for m in methods)
        if need_mix_beta:
            fit_window_betas(mixture, clustering, omega)
        if "FP" in methods:
            fit_window_betas(pooled, pooled_pipeline.clustering, omega)
        mipe_grid = {m: np.zeros((tau_grid.size, len(kappas))) for m in methods}
        for qi, tau in enumerate(tau_grid):
            futures = None
            per_curve_values = {m: [] for m in methods}
            for ci, curve in enumerate(test_curves):
                partial = _observed_slice(curve, tau, omega)
                preds = {}
                if any(m.startswith("FMP") for m in methods):
                    subs = mixture.subdomains(tau, omega)
                    betas = mixture.betas_for(omega)
                    per_cluster = [
                        _conditional_values(partial.values, sub, betas.at(c, tau))
                        for c, sub in enumerate(subs)
                    ]
                    posterior = classify_partial(partial, mixture, tau)
                    if "FMP_S" in methods:
                        preds["FMP_S"], _ = _combine(per_cluster, posterior, "soft")
                    if "FMP_H" in methods:
                        preds["FMP_H"], _ = _combine(per_cluster, posterior, "hard")
                    if "FMP_S*" in methods:
                        oracle = np.zeros(mixture.n_clusters)
                        oracle[int(test_labels[ci]) - 1] = 1.0
                        preds["FMP_S*"], _ = _combine(per_cluster, oracle, "soft")
                    futures = subs[0].future
                if any(m in BASELINE_MIXTURE_METHODS for m in methods):
                    subs = mixture.subdomains(tau, omega)
                    per_cluster = [
                        fpcp_cache.values(model, sub, partial.values,
                                          (_omega_key(omega), tau, c))
                        for c, (model, sub) in enumerate(zip(mixture.clusters, subs))
                    ]
                    posterior = classify_partial(partial, mixture, tau)
                    if "FPCP_S" in methods:
                        preds["FPCP_S"], _ = _combine(per_cluster, posterior, "soft")
                    if "FPCP_H" in methods:
                        preds["FPCP_H"], _ = _combine(per_cluster, posterior, "hard")
                    if "FPCP_S*" in methods:
                        oracle = np.zeros(mixture.n_clusters)
                        oracle[int(test_labels[ci]) - 1] = 1.0
                        preds["FPCP_S*"], _ = _combine(per_cluster, oracle, "soft")
                    futures = subs[0].future
                if "FP" in methods:
                    psub = pooled.subdomains(tau, omega)[0]
                    pbetas = pooled.betas_for(omega)
                    preds["FP"] = _conditional_values(partial.values, psub,
                                                      pbetas.at(0, tau))
                    futures = psub.future
                if "FPCP" in methods:
                    psub = pooled.subdomains(tau, omega)[0]
                    preds["FPCP"] = fpcp_cache.values(
                        pooled.clusters[0], psub, partial.values,
                        ("pooled", _omega_key(omega), tau),
                    )
                    futures = psub.future
                truth_idx = np.searchsorted(curve.grid.points, futures.grid.points)
                truth = curve.values[truth_idx]
                for m in methods:
                    per_curve_values[m].append(preds[m] - truth)
            for ki, kappa in enumerate(kappas):
                idx, w, length = _future_quadrature(futures.grid, tau, kappa)
                for m in methods:
                    errors = np.stack(per_curve_values[m])[:, idx]
                    cell = np.einsum("ij,j,ij->i", errors, w, errors) / length
                    mipe_grid[m][qi, ki] = float(cell.mean())
        for m in methods:
            for ki, kappa in enumerate(kappas):
                table.set(m, kappa, omega,
                          float(np.trapezoid(mipe_grid[m][:, ki], tau_grid)))
    return table


def average_tables(tables: list[MethodTable]) -> MethodTable:
    """Mean and standard error across replicate tables (same layout)."""
    if not tables:
        raise ValueError("need at least one table")
    first = tables[0]
    out = MethodTable(first.methods, first.kappas, first.omegas)
    for key in first.values:
        vals = np.array([t.values[key] for t in tables])
        out.values[key] = float(vals.mean())
        out.std_errors[key] = float(vals.std(ddof=1) / np.sqrt(len(vals))) \
            if len(vals) > 1 else 0.0
    return out
