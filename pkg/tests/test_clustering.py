import numpy as np
import pytest

from flowmix.clustering import (
    check_identifiability,
    fit_clusters,
    initial_clusters,
    kmeans_labels,
    pair_bootstrap_test,
    relative_distances,
    select_num_clusters,
)
from flowmix.config import Bandwidths
from flowmix.errors import ClusterSizeError, ConfigurationError, EmptyClusterError
from flowmix.grids import SampledCurve
from flowmix.simulate import align_labels, default_config, generate_dataset

from helpers import make_curves, orthonormalize
from test_fpca import analytic_model


def two_group_curves(day_grid, phi, rng, n=20, sep=5.0, noise=0.05):
    labels = np.repeat([0, 1], n // 2)
    signs = np.where(labels == 0, sep, -sep)
    ymat = signs[:, None] * phi[None, :] + rng.normal(0.0, noise, size=(n, 96))
    return make_curves(day_grid, ymat), labels


class TestInitialClusters:
    def test_separable_groups(self, day_grid, ortho_basis):
        rng = np.random.default_rng(0)
        curves, truth = two_group_curves(day_grid, ortho_basis[1], rng)
        labels = initial_clusters(curves, 2, seed=0)
        # agreement up to permutation
        agree = max(np.mean((labels - 1) == truth), np.mean((labels - 1) != truth))
        assert agree == 1.0

    def test_single_cluster(self, day_grid):
        curves = make_curves(day_grid, np.random.default_rng(1).normal(size=(6, 96)))
        assert np.all(initial_clusters(curves, 1) == 1)

    def test_identical_curves_fail(self, day_grid):
        line = 1.0 + 0.1 * day_grid.points
        curves = make_curves(day_grid, np.tile(line, (8, 1)))
        with pytest.raises(EmptyClusterError):
            kmeans_labels(np.zeros((8, 2)), 2, seed=0)
        with pytest.raises(EmptyClusterError):
            initial_clusters(curves, 2, seed=0)

    def test_too_few_curves(self, day_grid):
        curves = make_curves(day_grid, np.zeros((5, 96)))
        with pytest.raises(ValueError):
            initial_clusters(curves, 2)


class TestRelativeDistances:
    def test_exact_membership(self, day_grid, ortho_basis):
        m1 = analytic_model(day_grid, np.zeros(96), [4.0], ortho_basis[1:2], label=1)
        m2 = analytic_model(day_grid, 3.0 * ortho_basis[0], [4.0], ortho_basis[2:3],
                            label=2)
        curve = SampledCurve(day_grid, 2.0 * ortho_basis[1])
        d = relative_distances(curve, [m1, m2])
        assert d[0] == pytest.approx(0.0, abs=1e-12)
        assert d[1] == pytest.approx(1.0, abs=1e-12)

    def test_equal_residuals(self, day_grid, ortho_basis):
        m1 = analytic_model(day_grid, ortho_basis[0], [1.0], ortho_basis[1:2])
        m2 = analytic_model(day_grid, -ortho_basis[0], [1.0], ortho_basis[1:2])
        curve = SampledCurve(day_grid, np.zeros(96))
        d = relative_distances(curve, [m1, m2])
        assert np.allclose(d, [0.5, 0.5], atol=1e-12)

    def test_normalization_identity(self, day_grid, ortho_basis):
        # oracle: residual norms recomputed by direct quadrature
        rng = np.random.default_rng(5)
        models = [
            analytic_model(day_grid, rng.normal(size=96), [3.0, 1.0],
                           ortho_basis[:2], label=1),
            analytic_model(day_grid, rng.normal(size=96), [2.0], ortho_basis[2:3],
                           label=2),
            analytic_model(day_grid, rng.normal(size=96), [1.0], ortho_basis[1:2],
                           label=3),
        ]
        curve = SampledCurve(day_grid, rng.normal(size=96))
        d = relative_distances(curve, models)
        assert np.all(d >= 0)
        assert abs(d.sum() - 1.0) < 1e-12
        w = day_grid.weights
        direct = []
        for m in models:
            resid = curve.values - m.mean
            phi = m.eigenfunctions[: m.num_components]
            resid = resid - (phi * w[None, :]) @ resid @ phi
            direct.append(np.dot(w, resid * resid))
        assert np.allclose(d, np.array(direct) / np.sum(direct), rtol=1e-10)

    def test_degenerate_uniform(self, day_grid, ortho_basis):
        m1 = analytic_model(day_grid, np.zeros(96), [1.0], ortho_basis[1:2])
        m2 = analytic_model(day_grid, np.zeros(96), [1.0], ortho_basis[1:2])
        curve = SampledCurve(day_grid, np.zeros(96))
        with pytest.warns(UserWarning):
            d = relative_distances(curve, [m1, m2])
        assert np.allclose(d, 0.5)


class TestFitClusters:
    def test_three_cluster_recovery(self):
        cfg = default_config()
        errors = []
        for rep in range(3):
            train, _ = generate_dataset(cfg, seed=[7, rep])
            result = fit_clusters(train.curves, 3, seed=0)
            _, err = align_labels(result.membership.assignments, train.labels, 3)
            errors.append(err)
            assert result.distance_matrix.shape == (70, 3)
            assert np.allclose(result.distance_matrix.sum(axis=1), 1.0, atol=1e-9)
        assert np.mean(errors) < 0.10

    def test_k1_trivial(self, day_grid):
        rng = np.random.default_rng(2)
        curves = make_curves(day_grid, rng.normal(size=(8, 96)))
        result = fit_clusters(curves, 1)
        assert result.converged
        assert result.iterations == 0
        assert np.all(result.membership.assignments == 1)

    def test_relabeling_invariance(self):
        cfg = default_config()
        train, _ = generate_dataset(cfg, seed=[3, 0])
        base = initial_clusters(train.curves, 3, seed=0)
        perm_map = np.array([0, 3, 1, 2])  # relabel 1->3, 2->1, 3->2
        permuted = perm_map[base]
        r1 = fit_clusters(train.curves, 3, initial=base)
        r2 = fit_clusters(train.curves, 3, initial=permuted)
        a1 = r1.membership.assignments
        a2 = r2.membership.assignments
        # same partition up to label permutation
        mapping = {}
        for x, y in zip(a1, a2):
            assert mapping.setdefault(x, y) == y
        assert len(set(mapping.values())) == len(mapping)

    def test_shrinking_cluster_fails(self, day_grid, ortho_basis):
        rng = np.random.default_rng(4)
        curves, _ = two_group_curves(day_grid, ortho_basis[1], rng, n=20)
        bad_initial = np.ones(20, dtype=int)
        bad_initial[:4] = 2  # four curves that do not form a real group
        with pytest.raises(ClusterSizeError):
            fit_clusters(curves, 2, initial=rng.permutation(bad_initial))

    def test_agreement_history_best_iterate(self):
        cfg = default_config()
        train, _ = generate_dataset(cfg, seed=[11, 0])
        result = fit_clusters(train.curves, 3, seed=0)
        history = np.array(result.agreement_history)
        running_best = np.maximum.accumulate(history)
        assert history[-1] == running_best[-1]
        if result.converged:
            assert history[-1] == len(train.curves)


class TestIdentifiability:
    def test_identical_clusters_flagged(self, day_grid, ortho_basis):
        m1 = analytic_model(day_grid, ortho_basis[0], [2.0], ortho_basis[1:2], label=1)
        m2 = analytic_model(day_grid, ortho_basis[0], [1.0], ortho_basis[1:2], label=2)
        report = check_identifiability([m1, m2])
        assert report.has_violation

    def test_distinct_clusters_pass(self, day_grid, ortho_basis):
        m1 = analytic_model(day_grid, ortho_basis[0], [2.0], ortho_basis[1:2], label=1)
        m2 = analytic_model(day_grid, 5.0 + ortho_basis[0], [1.0], ortho_basis[2:3],
                            label=2)
        report = check_identifiability([m1, m2])
        assert not report.has_violation

    def test_nested_subspace_flagged(self, day_grid, ortho_basis):
        # oracle: principal angles via projection norms; the nested span
        # with an in-span mean triggers the violation
        mean = 2.0 * ortho_basis[1]
        m1 = analytic_model(day_grid, mean, [2.0], ortho_basis[1:2], label=1)
        m2 = analytic_model(day_grid, mean, [2.0, 1.0], ortho_basis[1:3], label=2)
        report = check_identifiability([m1, m2])
        nested = [p for p in report.pairs if p.c == 1 and p.d == 2]
        assert nested[0].span_nested
        assert report.has_violation


class TestSelectNumClusters:
    def test_insufficient_bootstrap_rejected(self, day_grid):
        curves = make_curves(day_grid, np.random.default_rng(0).normal(size=(12, 96)))
        with pytest.raises(ConfigurationError):
            select_num_clusters(curves, 2, b=50, level=0.001)
        with pytest.raises(ConfigurationError):
            select_num_clusters(curves, 2, b=30)

    def test_homogeneous_data_no_split(self, day_grid, ortho_basis):
        rng = np.random.default_rng(9)
        scores = rng.normal(0.0, 2.0, size=(24, 1))
        ymat = 5.0 + scores * ortho_basis[1][None, :] + rng.normal(0.0, 0.4, (24, 96))
        k, records = select_num_clusters(make_curves(day_grid, ymat), 3,
                                         b=60, level=0.05, seed=1)
        assert k == 1
        assert records[0].k == 2
        assert not records[0].accepted

    def test_three_cluster_data_selects_three(self):
        # the K=3 Bonferroni level is 0.05/6, so the bootstrap needs at
        # least 120 samples for rejection to be attainable at all
        cfg = default_config()
        train, _ = generate_dataset(cfg, seed=[21, 0])
        k, records = select_num_clusters(train.curves, 3, b=150, level=0.05, seed=0)
        assert k == 3
        assert all(r.accepted for r in records)

    def test_pair_test_pvalues_in_range(self, day_grid, ortho_basis):
        rng = np.random.default_rng(13)
        ymat = 3.0 + rng.normal(0.0, 1.5, size=(16, 1)) * ortho_basis[1][None, :] \
            + rng.normal(0.0, 0.3, size=(16, 96))
        bw = Bandwidths(mean=1.0, covariance=1.0, diagonal=1.0)
        p_mean, p_sub = pair_bootstrap_test(ymat, day_grid, 60, bw, 0.9, [0, 2])
        assert 0.0 < p_mean <= 1.0
        assert 0.0 < p_sub <= 1.0
