"""Iterative subspace-projected clustering of complete daily curves.

Cluster subspaces (mean plus leading eigenfunctions) and memberships are
updated in alternation until assignments stop changing.  Membership uses
relative L2 projection distances: the first pass assigns each curve to its
minimum-distance cluster, later passes refit the multiclass logit on the
current distances and assign by maximum posterior.

The number of clusters is chosen by a forward sequence of pairwise
bootstrap tests of mean equality (H01) and eigenspace equality (H02); the
largest count for which every pair rejects both nulls at the
multiplicity-adjusted level wins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .classify import (
    LogitCoefficients,
    distance_covariates,
    fit_logit,
    posterior_matrix,
    relative_from_residuals,
)
from .config import Bandwidths
from .errors import (
    ClusterSizeError,
    ConfigurationError,
    EmptyClusterError,
    FitError,
)
from .fpca import ClusterModel, fit_cluster_model
from .grids import SampledCurve, TimeGrid, curve_matrix

MIN_CLUSTER_SIZE = 4


def _residual_matrix(ymat: np.ndarray, models: list[ClusterModel]) -> np.ndarray:
    """Squared projection residual of every curve against every model."""
    n = ymat.shape[0]
    out = np.empty((n, len(models)))
    for j, model in enumerate(models):
        block = model.full_block()
        centered = ymat - model.mean[None, :]
        phi = model.eigenfunctions[: model.num_components]
        scores = centered @ (phi * model.grid.weights[None, :]).T
        resid = centered - scores @ phi
        out[:, j] = np.einsum("ij,j,ij->i", resid, model.grid.weights, resid)
    return out


def _relative_matrix(residuals: np.ndarray) -> np.ndarray:
    totals = residuals.sum(axis=1, keepdims=True)
    degenerate = totals[:, 0] <= 0.0
    if np.any(degenerate):
        warnings.warn("curves with zero residual to every cluster: uniform distances")
    safe = np.where(totals > 0.0, totals, 1.0)
    out = residuals / safe
    out[degenerate] = 1.0 / residuals.shape[1]
    return out


def relative_distances(curve: SampledCurve, models: list[ClusterModel]) -> np.ndarray:
    """Relative L2 distances of one curve to each cluster subspace.

    Each entry is the squared residual of the truncated projection onto
    that cluster, normalized by the sum over clusters; entries are
    nonnegative and sum to one.
    """
    if len(models) < 2:
        raise ValueError("relative distances need at least 2 cluster models")
    grid, ymat = curve_matrix([curve])
    if not grid.matches(models[0].grid):
        raise ValueError("curve grid does not match the models")
    resid = _residual_matrix(ymat, models)
    return relative_from_residuals(resid[0])


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator,
                 max_iter: int = 100) -> tuple[np.ndarray | None, float]:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.square(x - centers[0]).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            return None, np.inf
        centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.square(x - centers[j]).sum(axis=1))
    labels = None
    for _ in range(max_iter):
        dist = np.square(x[:, None, :] - centers[None, :, :]).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            if not np.any(mask):
                return None, np.inf
            centers[j] = x[mask].mean(axis=0)
    dist = np.square(x[:, None, :] - centers[None, :, :]).sum(axis=2)
    inertia = float(dist[np.arange(n), labels].sum())
    return labels, inertia


def kmeans_labels(x: np.ndarray, k: int, seed, restarts: int = 10,
                  reseeds: int = 10) -> np.ndarray:
    """Seeded k-means (++-style init, multiple restarts) returning labels 0..k-1.

    ``seed`` may be an int or a flat sequence of ints.  A whole round of
    restarts that only produces empty clusters triggers a re-seed; after
    ``reseeds`` failed rounds an
    :class:`~flowmix.errors.EmptyClusterError` is raised.
    """
    if k == 1:
        return np.zeros(x.shape[0], dtype=int)
    entropy = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    for attempt in range(reseeds):
        rng = np.random.default_rng(entropy + [attempt])
        best_labels, best_inertia = None, np.inf
        for _ in range(restarts):
            labels, inertia = _kmeans_once(x, k, rng)
            if labels is not None and inertia < best_inertia:
                best_labels, best_inertia = labels, inertia
        if best_labels is not None:
            return best_labels
    raise EmptyClusterError(
        f"k-means produced an empty cluster in {reseeds} seeding rounds"
    )


def initial_clusters(curves: list[SampledCurve], k: int, seed: int = 0,
                     fve_threshold: float = 0.90, folds: int = 10) -> np.ndarray:
    """Initial hard labels (1..K) from k-means on overall projection scores.

    Fits a single pattern model to all curves and clusters the leading
    component scores.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(curves) < 3 * k:
        raise ValueError(f"need at least {3 * k} curves for {k} clusters")
    if k == 1:
        return np.ones(len(curves), dtype=int)
    overall = fit_cluster_model(curves, fve_threshold=fve_threshold, folds=folds)
    _, ymat = curve_matrix(curves)
    scores = overall.full_block().scores(ymat)
    # whiten per component: keeps one dominant variance direction from
    # swamping the cluster geometry in the k-means metric
    spread = scores.std(axis=0, ddof=1)
    scores = scores / np.where(spread > 0, spread, 1.0)
    return kmeans_labels(scores, k, seed) + 1


@dataclass
class Membership:
    """Hard labels (1..K) and, once the logit is fitted, the posterior rows."""

    assignments: np.ndarray
    posterior: np.ndarray | None = None


@dataclass
class ClusteringResult:
    """Converged cluster models plus the membership trajectory."""

    models: list[ClusterModel]
    membership: Membership
    iterations: int
    converged: bool
    distance_matrix: np.ndarray
    gamma: LogitCoefficients
    curves: list[SampledCurve] = field(repr=False, default_factory=list)
    agreement_history: list[int] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.models)


def _check_sizes(labels: np.ndarray, k: int, min_size: int, stage: str):
    counts = np.bincount(labels - 1, minlength=k)
    small = np.nonzero(counts < min_size)[0]
    if small.size:
        detail = ", ".join(f"cluster {c + 1}: {counts[c]}" for c in small)
        raise ClusterSizeError(
            f"{stage}: cluster size fell below {min_size} ({detail})"
        )


def fit_clusters(curves: list[SampledCurve], k: int, seed: int = 0,
                 fve_threshold: float = 0.90, ridge: float = 1e-6,
                 max_iterations: int = 50,
                 min_cluster_size: int = MIN_CLUSTER_SIZE, folds: int = 10,
                 initial: np.ndarray | None = None) -> ClusteringResult:
    """Alternate cluster-subspace fits and membership reassignment.

    The loop stops when no assignment changes or after ``max_iterations``,
    returning the best iterate (most self-consistent assignment) in the
    latter case.  Smoothing bandwidths are cross-validated on the first
    pass per cluster and reused afterwards.
    """
    grid, ymat = curve_matrix(curves)
    n = ymat.shape[0]
    if initial is not None:
        labels = np.asarray(initial, dtype=int).copy()
        if labels.shape != (n,):
            raise ValueError("initial labels must have one entry per curve")
    else:
        labels = initial_clusters(curves, k, seed=seed,
                                  fve_threshold=fve_threshold, folds=folds)
    if k == 1:
        model = fit_cluster_model(curves, fve_threshold=fve_threshold,
                                  label=1, folds=folds)
        membership = Membership(np.ones(n, dtype=int), np.ones((n, 1)))
        return ClusteringResult(
            models=[model], membership=membership, iterations=0, converged=True,
            distance_matrix=np.ones((n, 1)), gamma=LogitCoefficients(np.zeros((0, 1)), 1),
            curves=list(curves), agreement_history=[n],
        )

    bandwidth_cache: dict[int, Bandwidths] = {}
    best = None
    history: list[int] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        _check_sizes(labels, k, min_cluster_size, f"iteration {iterations}")
        models = []
        for c in range(1, k + 1):
            members = [curves[i] for i in np.nonzero(labels == c)[0]]
            model = fit_cluster_model(
                members, fve_threshold=fve_threshold, label=c,
                bandwidths=bandwidth_cache.get(c), folds=folds,
            )
            bandwidth_cache[c] = model.bandwidths
            models.append(model)
        distances = _relative_matrix(_residual_matrix(ymat, models))
        if iterations == 1:
            gamma = None
            new_labels = distances.argmin(axis=1) + 1
            post = None
        else:
            gamma = fit_logit(distance_covariates(distances), labels, ridge=ridge)
            post = posterior_matrix(distance_covariates(distances), gamma)
            new_labels = post.argmax(axis=1) + 1
        agreement = int(np.count_nonzero(new_labels == labels))
        history.append(agreement)
        if best is None or agreement >= best[0]:
            best = (agreement, labels.copy(), models, gamma, distances, post)
        if np.array_equal(new_labels, labels) and iterations > 1:
            converged = True
            break
        labels = new_labels

    agreement, labels, models, gamma, distances, post = best
    if gamma is None:
        gamma = fit_logit(distance_covariates(distances), labels, ridge=ridge)
        post = posterior_matrix(distance_covariates(distances), gamma)
    if not converged:
        warnings.warn(
            f"clustering did not converge in {max_iterations} iterations; "
            f"returning the most self-consistent iterate ({agreement}/{n})"
        )
    return ClusteringResult(
        models=models,
        membership=Membership(labels, post),
        iterations=iterations,
        converged=converged,
        distance_matrix=distances,
        gamma=gamma,
        curves=list(curves),
        agreement_history=history,
    )


@dataclass
class PairIdentifiability:
    """Identifiability diagnostics for one ordered cluster pair (c into d)."""

    c: int
    d: int
    span_nested: bool
    means_equal: bool
    means_in_spans: bool

    @property
    def violated(self) -> bool:
        return self.span_nested and (self.means_equal or self.means_in_spans)


@dataclass
class IdentifiabilityReport:
    pairs: list[PairIdentifiability]

    @property
    def violations(self) -> list[PairIdentifiability]:
        return [p for p in self.pairs if p.violated]

    @property
    def has_violation(self) -> bool:
        return bool(self.violations)


ANGLE_TOL = 1e-6


def _orthonormal_columns(model: ClusterModel) -> np.ndarray:
    sqw = np.sqrt(model.grid.weights)
    phi = model.eigenfunctions[: model.num_components]
    return (phi * sqw[None, :]).T


def _span_contains(q_small: np.ndarray, q_big: np.ndarray) -> bool:
    if q_small.shape[1] > q_big.shape[1]:
        return False
    s = np.linalg.svd(q_small.T @ q_big, compute_uv=False)
    cos_min = np.clip(s[: q_small.shape[1]].min(), -1.0, 1.0)
    return float(np.arccos(cos_min)) < ANGLE_TOL


def _mean_in_span(mean: np.ndarray, model: ClusterModel, rtol: float) -> bool:
    w = model.grid.weights
    phi = model.eigenfunctions[: model.num_components]
    coef = (phi * w[None, :]) @ mean
    resid = mean - coef @ phi
    scale = max(float(np.sqrt(np.dot(w, mean * mean))), 1e-12)
    return float(np.sqrt(np.dot(w, resid * resid))) <= rtol * scale


def check_identifiability(models: list[ClusterModel],
                          mean_rtol: float = 1e-6) -> IdentifiabilityReport:
    """Flag ordered cluster pairs whose subspace-projection clusters are not
    identifiable: the leading eigenspace of one lies inside the other's
    while the mean condition holds simultaneously."""
    if len(models) < 2:
        raise ValueError("identifiability needs at least 2 cluster models")
    w = models[0].grid.weights
    pairs = []
    for i, mc in enumerate(models):
        for j, md in enumerate(models):
            if i == j:
                continue
            nested = _span_contains(_orthonormal_columns(mc), _orthonormal_columns(md))
            diff = mc.mean - md.mean
            scale = max(np.sqrt(np.dot(w, mc.mean**2)), np.sqrt(np.dot(w, md.mean**2)), 1e-12)
            means_equal = np.sqrt(np.dot(w, diff * diff)) <= mean_rtol * scale
            means_in = (_mean_in_span(mc.mean, md, mean_rtol)
                        and _mean_in_span(md.mean, mc, mean_rtol))
            pairs.append(PairIdentifiability(mc.label, md.label, nested,
                                             means_equal, means_in))
    return IdentifiabilityReport(pairs)


@dataclass
class PairTest:
    """Bootstrap p-values for one cluster pair (mean and eigenspace nulls)."""

    pair: tuple[int, int]
    p_mean: float
    p_subspace: float
    reject_mean: bool
    reject_subspace: bool


@dataclass
class ClusterCountTest:
    """All pairwise test results at one candidate cluster count."""

    k: int
    pair_results: list[PairTest]
    bootstrap_samples: int
    adjusted_level: float
    accepted: bool
    note: str = ""


def _median_split(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores[:, 0], kind="stable")
    labels = np.zeros(scores.shape[0], dtype=int)
    labels[order[scores.shape[0] // 2:]] = 1
    return labels


def _out_of_span_fraction(source: ClusterModel, target: ClusterModel) -> float:
    """Fraction of the source covariance energy outside the target's
    leading eigenspace (quadrature inner products)."""
    q = _orthonormal_columns(target)
    lam = source.eigenvalues
    u = _orthonormal_columns_full(source)
    captured = float(np.sum(lam * np.sum(np.square(q.T @ u), axis=0)))
    total = float(lam.sum())
    return max(0.0, 1.0 - captured / max(total, 1e-300))


def _orthonormal_columns_full(model: ClusterModel) -> np.ndarray:
    sqw = np.sqrt(model.grid.weights)
    return (model.eigenfunctions * sqw[None, :]).T


def _two_way_split(ymat: np.ndarray, grid: TimeGrid, bandwidths: Bandwidths,
                   fve_threshold: float, seed_key: list[int]) -> np.ndarray:
    """Repeat the initial clustering device: k-means(2) on overall scores."""
    curves = [SampledCurve(grid, row) for row in ymat]
    overall = fit_cluster_model(curves, fve_threshold=fve_threshold,
                                bandwidths=bandwidths)
    scores = overall.full_block().scores(ymat)
    try:
        labels = kmeans_labels(scores, 2, seed=seed_key)
    except EmptyClusterError:
        labels = _median_split(scores)
    if min(np.count_nonzero(labels == 0), np.count_nonzero(labels == 1)) < 3:
        labels = _median_split(scores)
    return labels


def _split_statistics(ymat: np.ndarray, grid: TimeGrid, bandwidths: Bandwidths,
                      fve_threshold: float, seed_key: list[int],
                      nuisance: np.ndarray | None = None):
    """Split a pooled sample in two and measure group differences.

    The mean statistic is the integrated squared mean difference after
    projecting out the pooled within-variation directions (``nuisance``
    rows, quadrature-orthonormal): splits that merely ride a large
    within-cluster variance direction score near zero, while genuine mean
    gaps outside every eigenspace survive.  The eigenspace statistic is
    the symmetrized fraction of one group's covariance energy outside the
    other group's leading eigenspace, zero when the spans agree
    regardless of the eigenvalues.
    """
    labels = _two_way_split(ymat, grid, bandwidths, fve_threshold, seed_key)
    groups = []
    for g in (0, 1):
        rows = ymat[labels == g]
        groups.append(
            fit_cluster_model([SampledCurve(grid, r) for r in rows],
                              fve_threshold=fve_threshold, bandwidths=bandwidths)
        )
    a, b = groups
    diff = a.mean - b.mean
    if nuisance is not None:
        diff = diff - (nuisance * grid.weights[None, :]) @ diff @ nuisance
    t_mean = float(np.dot(grid.weights, diff * diff))
    t_sub = 0.5 * (_out_of_span_fraction(a, b) + _out_of_span_fraction(b, a))
    return t_mean, t_sub, labels


def pair_bootstrap_test(pool: np.ndarray, grid: TimeGrid, b: int,
                        bandwidths: Bandwidths, fve_threshold: float,
                        seed_key: list[int]) -> tuple[float, float]:
    """Bootstrap p-values for mean/eigenspace equality of a pooled pair.

    The observed statistics come from a two-way split of the pooled
    curves; each hypothesis gets a reference distribution that imposes
    its own null while repeating the identical split procedure, so the
    split's selection effect is present under both nulls.

    Mean null: whole residual curves (centered at their split-group
    means) resampled with replacement around the pooled mean (covariance
    heterogeneity preserved).  Eigenspace null: split-group means kept,
    deviations drawn from one Gaussian process with the pooled residual
    covariance (a common eigenspace by construction).
    """
    labels = _two_way_split(pool, grid, bandwidths, fve_threshold,
                            seed_key + [0])
    pooled_mean = pool.mean(axis=0)
    group_means = np.stack([pool[labels == g].mean(axis=0) for g in (0, 1)])
    residuals = pool - group_means[labels]

    common = fit_cluster_model([SampledCurve(grid, r) for r in residuals],
                               fve_threshold=fve_threshold,
                               bandwidths=bandwidths)
    lam = common.eigenvalues
    sigma = np.sqrt(max(common.noise_variance, 0.0))
    nuisance = common.eigenfunctions[: common.num_components]

    t_mean, t_sub, _ = _split_statistics(pool, grid, bandwidths,
                                         fve_threshold, seed_key + [0],
                                         nuisance=nuisance)
    rng = np.random.default_rng(seed_key + [1])
    n = pool.shape[0]
    exceed_mean = 0
    exceed_sub = 0
    for rep in range(b):
        sample = pooled_mean[None, :] + residuals[rng.integers(0, n, size=n)]
        bt_mean, _, _ = _split_statistics(sample, grid, bandwidths,
                                          fve_threshold, seed_key + [2, rep],
                                          nuisance=nuisance)
        exceed_mean += bt_mean >= t_mean
        xi = rng.normal(size=(n, lam.size)) * np.sqrt(lam)[None, :]
        deviations = xi @ common.eigenfunctions \
            + rng.normal(0.0, sigma, size=(n, grid.n))
        sample = group_means[labels] + common.mean[None, :] + deviations
        _, bt_sub, _ = _split_statistics(sample, grid, bandwidths,
                                         fve_threshold, seed_key + [3, rep],
                                         nuisance=nuisance)
        exceed_sub += bt_sub >= t_sub
    p_mean = (1.0 + exceed_mean) / (b + 1.0)
    p_sub = (1.0 + exceed_sub) / (b + 1.0)
    return p_mean, p_sub


def select_num_clusters(curves: list[SampledCurve], k_max: int, b: int = 200,
                        level: float = 0.05, seed: int = 0,
                        fve_threshold: float = 0.90, ridge: float = 1e-6,
                        folds: int = 10) -> tuple[int, list[ClusterCountTest]]:
    """Forward search for the largest statistically distinct cluster count.

    For K = 2, 3, ... every cluster pair is tested for equal means (H01)
    and equal leading eigenspaces (H02) with ``b`` bootstrap samples; K is
    accepted when all pairs reject both nulls at the Bonferroni-adjusted
    level over all pair-hypothesis tests.  The search stops at the first
    non-accepted K and returns the largest accepted one (1 when even K=2
    shows no significant split).
    """
    if k_max < 2:
        raise ConfigurationError("k_max must be at least 2")
    if b < 50:
        raise ConfigurationError("bootstrap sample count must be at least 50")
    if 1.0 / (b + 1.0) > level / 2.0:
        raise ConfigurationError(
            f"b={b} cannot reach the adjusted level {level / 2.0:.4g} for K=2; "
            f"increase the bootstrap sample count"
        )
    grid, ymat = curve_matrix(curves)
    accepted_k = 1
    records: list[ClusterCountTest] = []
    for k in range(2, k_max + 1):
        n_tests = k * (k - 1)  # pairs times two hypotheses
        adj = level / n_tests
        try:
            result = fit_clusters(curves, k, seed=seed, fve_threshold=fve_threshold,
                                  ridge=ridge, folds=folds)
        except FitError as exc:
            records.append(ClusterCountTest(k, [], b, adj, accepted=False,
                                            note=f"fit failed: {exc}"))
            break
        labels = result.membership.assignments
        note = ""
        if 1.0 / (b + 1.0) > adj:
            note = (f"minimum attainable p-value {1.0 / (b + 1.0):.4g} exceeds the "
                    f"adjusted level {adj:.4g}; K={k} cannot be accepted at b={b}")
        pair_results = []
        for c in range(1, k + 1):
            for d in range(c + 1, k + 1):
                pool = ymat[(labels == c) | (labels == d)]
                bw = result.models[c - 1].bandwidths
                p_mean, p_sub = pair_bootstrap_test(
                    pool, grid, b, bw, fve_threshold, seed_key=[seed, k, c, d]
                )
                pair_results.append(PairTest(
                    (c, d), p_mean, p_sub,
                    reject_mean=p_mean <= adj, reject_subspace=p_sub <= adj,
                ))
        accepted = (not note) and all(
            p.reject_mean and p.reject_subspace for p in pair_results
        )
        records.append(ClusterCountTest(k, pair_results, b, adj, accepted, note))
        if not accepted:
            break
        accepted_k = k
    return accepted_k, records
