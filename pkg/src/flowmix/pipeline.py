"""End-to-end model fitting: clustering, classification and regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classify import distance_covariates, fit_logit, partial_distances
from .clustering import (
    ClusterCountTest,
    ClusteringResult,
    fit_clusters,
    select_num_clusters,
)
from .config import PipelineConfig
from .fpca import restrict_model
from .grids import SampledCurve, curve_matrix
from .predict import FULL_PAST, MixtureModel, fit_beta, smooth_beta, _omega_key


@dataclass
class TrainedPipeline:
    """A fitted mixture plus the clustering it came from."""

    mixture: MixtureModel
    clustering: ClusteringResult
    k_records: list[ClusterCountTest] | None = None


def _gamma_by_tau(result: ClusteringResult, tau_grid: np.ndarray,
                  ridge: float) -> dict:
    """Per-split-time logit refits on the training partial distances."""
    _, ymat = curve_matrix(result.curves)
    labels = result.membership.assignments
    out = {}
    for tau in tau_grid:
        subs = [restrict_model(m, tau) for m in result.models]
        rows = np.stack([
            partial_distances(
                SampledCurve(subs[0].observed.grid, y[subs[0].observed.indices]),
                subs,
            )
            for y in ymat
        ])
        out[round(float(tau), 9)] = fit_logit(distance_covariates(rows), labels,
                                              ridge=ridge)
    return out


def fit_mixture(curves: list[SampledCurve],
                config: PipelineConfig | None = None) -> TrainedPipeline:
    """Fit the full pipeline on complete training curves.

    Runs the iterative clustering (selecting the cluster count by forward
    testing when unspecified), keeps the final membership logit, fits the
    score regression over the split-time grid for the full-past window and
    smooths it.
    """
    config = config or PipelineConfig()
    k = config.n_clusters
    k_records = None
    if k is None:
        k, k_records = select_num_clusters(
            curves, config.k_max, b=config.test_replicates,
            level=config.test_level, seed=config.seed,
            fve_threshold=config.fve_threshold, ridge=config.ridge,
            folds=config.cv_folds,
        )
    result = fit_clusters(
        curves, k, seed=config.seed, fve_threshold=config.fve_threshold,
        ridge=config.ridge, max_iterations=config.max_iterations,
        min_cluster_size=config.min_cluster_size, folds=config.cv_folds,
    )
    raw = fit_beta(result, config.tau_grid, omega=None)
    smoothed = smooth_beta(raw, folds=config.cv_folds, seed=config.seed)
    gamma_by_tau = None
    if config.refit_gamma_per_tau and k > 1:
        gamma_by_tau = _gamma_by_tau(result, config.tau_grid, config.ridge)
    grid, _ = curve_matrix(curves)
    mixture = MixtureModel(
        grid=grid,
        clusters=result.models,
        gamma=result.gamma,
        betas={FULL_PAST: smoothed},
        tau_grid=config.tau_grid,
        config=config,
        gamma_by_tau=gamma_by_tau,
        training_distances=result.distance_matrix,
        training_labels=result.membership.assignments,
    )
    return TrainedPipeline(mixture=mixture, clustering=result, k_records=k_records)


def fit_window_betas(mixture: MixtureModel, clustering: ClusteringResult,
                     omega: float | None) -> None:
    """Fit and attach regression coefficients for one observed-window
    length (no-op when already present)."""
    key = _omega_key(omega)
    if key in mixture.betas:
        return
    raw = fit_beta(clustering, mixture.tau_grid, omega=omega)
    mixture.betas[key] = smooth_beta(raw, folds=mixture.config.cv_folds,
                                     seed=mixture.config.seed)
