import numpy as np
import pytest

from flowmix.errors import (
    GridMismatchError,
    InvalidCovarianceError,
    NoVarianceError,
)
from flowmix.grids import SampledCurve, Surface, TimeGrid, uniform_grid
from flowmix.fpca import (
    ClusterModel,
    compute_scores,
    eigendecompose,
    estimate_covariance,
    estimate_mean,
    fit_cluster_model,
    reconstruction,
    restrict_model,
    select_num_components,
)
from helpers import make_curves, orthonormalize


def analytic_model(grid, mean, eigenvalues, eigenfunctions, noise=0.0, label=0):
    lam = np.asarray(eigenvalues, dtype=float)
    phi = np.asarray(eigenfunctions, dtype=float)
    cov = (phi.T * lam) @ phi
    return ClusterModel(
        grid=grid, mean=np.asarray(mean, dtype=float), covariance=cov,
        eigenvalues=lam, eigenfunctions=phi, num_components=lam.size,
        noise_variance=noise, label=label,
    )


class TestEstimateMean:
    def test_linear_mean_reproduced(self, day_grid):
        truth = 3.0 + 2.0 * day_grid.points
        curves = make_curves(day_grid, [truth, truth, truth])
        fit = estimate_mean(curves)
        assert np.max(np.abs(fit.values - truth)) < 1e-8

    def test_noisy_mean_recovery(self, day_grid):
        # known-mean oracle with a root-n error budget
        rng = np.random.default_rng(8)
        truth = 2.0 + 0.3 * day_grid.points
        sd = 1.5
        curves = make_curves(
            day_grid, truth[None, :] + rng.normal(0.0, sd, size=(50, 96))
        )
        fit = estimate_mean(curves)
        interior = (day_grid.points > 2.0) & (day_grid.points < 22.0)
        assert np.max(np.abs(fit.values - truth)[interior]) < 3.0 * sd / np.sqrt(50)

    def test_two_constant_curves_average(self, day_grid):
        curves = make_curves(day_grid, [np.zeros(96), np.full(96, 10.0)])
        fit = estimate_mean(curves)
        assert np.allclose(fit.values, 5.0, atol=1e-8)


class TestEstimateCovariance:
    def test_rank_one_recovery(self, day_grid, ortho_basis):
        # oracle: the empirical covariance of the raw curves
        rng = np.random.default_rng(4)
        phi = ortho_basis[1]
        scores = rng.normal(0.0, 2.0, size=200)
        ymat = scores[:, None] * phi[None, :]
        curves = make_curves(day_grid, ymat)
        mean = estimate_mean(curves)
        est = estimate_covariance(curves, mean)
        sample_cov = np.cov(ymat, rowvar=False)
        denom = np.linalg.norm(sample_cov)
        assert np.linalg.norm(est.surface.values - sample_cov) / denom < 0.15
        assert est.noise_variance < 0.1
        assert est.surface.asymmetry() < 1e-12

    def test_zero_variance_degenerate(self, day_grid):
        truth = 1.0 + 0.4 * day_grid.points
        curves = make_curves(day_grid, [truth] * 5)
        mean = estimate_mean(curves)
        est = estimate_covariance(curves, mean)
        assert np.max(np.abs(est.surface.values)) < 1e-10
        assert est.noise_variance < 1e-12

    def test_noise_variance_recovery(self, day_grid, ortho_basis):
        rng = np.random.default_rng(12)
        phi = ortho_basis[1]
        scores = rng.normal(0.0, 2.0, size=200)
        ymat = scores[:, None] * phi[None, :] + rng.normal(0.0, 1.0, size=(200, 96))
        curves = make_curves(day_grid, ymat)
        mean = estimate_mean(curves)
        est = estimate_covariance(curves, mean)
        assert 0.7 <= est.noise_variance <= 1.3


class TestEigendecompose:
    def test_rank_one_kernel(self, day_grid, ortho_basis):
        phi = ortho_basis[1]
        surf = Surface(day_grid, day_grid, 4.0 * np.outer(phi, phi))
        lam, funcs = eigendecompose(surf)
        assert lam[0] == pytest.approx(4.0, abs=1e-10)
        if lam.size > 1:
            assert np.all(lam[1:] < 1e-10)
        sign = np.sign(np.dot(day_grid.weights, phi)) or 1.0
        assert np.allclose(funcs[0], sign * phi, atol=1e-8)

    def test_three_component_recovery(self, day_grid):
        # synthetic spectral truth from orthonormalized polynomials
        t = day_grid.points
        basis = orthonormalize([np.ones(96), t, t * t], day_grid.weights)
        cov = sum(j * np.outer(b, b) for j, b in zip((3.0, 2.0, 1.0), basis))
        lam, funcs = eigendecompose(Surface(day_grid, day_grid, cov))
        assert np.allclose(lam[:3], [3.0, 2.0, 1.0], atol=1e-6)
        for want, got in zip(basis, funcs[:3]):
            align = np.sign(np.dot(day_grid.weights, want * got))
            assert np.allclose(got, align * want, atol=1e-6)

    def test_orthonormal_under_quadrature(self, day_grid):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(96, 96))
        cov = a @ a.T / 96.0
        lam, funcs = eigendecompose(Surface(day_grid, day_grid, cov))
        w = day_grid.weights
        gram = (funcs * w[None, :]) @ funcs.T
        assert np.max(np.abs(gram - np.eye(len(lam)))) < 1e-8
        assert np.all(np.diff(lam) <= 1e-12)
        assert np.all(lam > 0)

    def test_zero_surface_fails_downstream(self, day_grid):
        lam, funcs = eigendecompose(Surface(day_grid, day_grid, np.zeros((96, 96))))
        assert lam.size == 0
        with pytest.raises(NoVarianceError):
            select_num_components(lam)

    def test_asymmetric_input_rejected(self, day_grid):
        bad = np.eye(96)
        bad[0, 1] = 0.5
        with pytest.raises(InvalidCovarianceError):
            eigendecompose(Surface(day_grid, day_grid, bad))


class TestSelectNumComponents:
    def test_worked_cases(self):
        assert select_num_components(np.array([9.0, 1.0]), 0.9) == 1
        assert select_num_components(np.array([1.0, 1.0, 1.0, 1.0]), 0.9) == 4

    def test_ignores_nonpositive_tail(self):
        assert select_num_components(np.array([5.0, 4.0, 1.0, 0.0]), 0.9) == 2

    def test_invalid_delta(self):
        with pytest.raises(ValueError):
            select_num_components(np.array([1.0]), 0.0)


class TestComputeScores:
    def test_exact_component(self, day_grid, ortho_basis):
        mean = 5.0 + 0.1 * day_grid.points
        model = analytic_model(day_grid, mean, [4.0, 1.0], ortho_basis[1:3])
        curve = SampledCurve(day_grid, mean + 2.0 * ortho_basis[1])
        scores = compute_scores(curve, model)
        assert np.allclose(scores, [2.0, 0.0], atol=1e-8)

    def test_centered_curve_has_zero_scores(self, day_grid, ortho_basis):
        mean = np.sin(day_grid.points / 4.0)
        model = analytic_model(day_grid, mean, [4.0], ortho_basis[1:2])
        assert np.allclose(compute_scores(SampledCurve(day_grid, mean), model), 0.0)

    def test_projection_residual_orthogonality(self, day_grid, ortho_basis):
        # oracle: quadrature inner products of the residual with each basis row
        rng = np.random.default_rng(14)
        model = analytic_model(day_grid, np.zeros(96), [4.0, 2.0], ortho_basis[1:3])
        curve = SampledCurve(day_grid, rng.normal(size=96))
        recon = reconstruction(curve, model)
        resid = curve.values - recon
        for phi in model.eigenfunctions:
            assert abs(np.dot(day_grid.weights, resid * phi)) < 1e-8

    def test_grid_mismatch(self, day_grid, ortho_basis):
        model = analytic_model(day_grid, np.zeros(96), [1.0], ortho_basis[:1])
        other = SampledCurve(TimeGrid(np.linspace(0, 24, 96)), np.zeros(96))
        with pytest.raises(GridMismatchError):
            compute_scores(other, model)


class TestRestrictModel:
    def test_block_trace_identity(self, day_grid):
        # oracle: trapezoid of the covariance diagonal over each block
        rng = np.random.default_rng(5)
        a = rng.normal(size=(96, 96))
        cov = a @ a.T / 96.0
        lam, funcs = eigendecompose(Surface(day_grid, day_grid, cov))
        model = ClusterModel(
            grid=day_grid, mean=np.zeros(96), covariance=cov, eigenvalues=lam,
            eigenfunctions=funcs, num_components=3, noise_variance=0.0,
        )
        sub = restrict_model(model, 12.0)
        w_s = sub.observed.grid.weights
        w_t = sub.future.grid.weights
        diag = np.diag(cov)
        assert sub.observed.eigenvalues.sum() == pytest.approx(
            np.dot(w_s, diag[sub.observed.indices]), rel=1e-10
        )
        assert sub.future.eigenvalues.sum() == pytest.approx(
            np.dot(w_t, diag[sub.future.indices]), rel=1e-10
        )
        total = sub.observed.eigenvalues.sum() + sub.future.eigenvalues.sum()
        assert total == pytest.approx(lam.sum(), rel=1e-10)

    def test_rank_one_restriction(self, day_grid, ortho_basis):
        phi = ortho_basis[1]
        lam = 4.0
        model = analytic_model(day_grid, np.zeros(96), [lam], [phi])
        sub = restrict_model(model, 12.0)
        idx = sub.observed.indices
        w_s = sub.observed.grid.weights
        norm_sq = np.dot(w_s, phi[idx] ** 2)
        assert sub.observed.eigenvalues[0] == pytest.approx(lam * norm_sq, rel=1e-8)
        want = phi[idx] / np.sqrt(norm_sq)
        got = sub.observed.eigenfunctions[0]
        align = np.sign(np.dot(w_s, want * got))
        assert np.allclose(got, align * want, atol=1e-8)

    def test_domain_errors(self, day_grid, ortho_basis):
        model = analytic_model(day_grid, np.zeros(96), [1.0], ortho_basis[:1])
        with pytest.raises(ValueError):
            restrict_model(model, 24.0)
        with pytest.raises(ValueError):
            restrict_model(model, 0.25)
        with pytest.warns(UserWarning):
            sub = restrict_model(model, 12.07)
        assert sub.tau == 12.0

    def test_windowed_restriction(self, day_grid, ortho_basis):
        model = analytic_model(day_grid, np.zeros(96), [2.0, 1.0], ortho_basis[1:3])
        sub = restrict_model(model, 12.0, omega=2.0)
        assert sub.observed.grid.points[0] == 10.0
        assert sub.observed.grid.points[-1] == 12.0
        assert sub.cross_block.shape == (9, 49)


class TestFitClusterModel:
    def test_end_to_end_invariants(self, day_grid, ortho_basis):
        rng = np.random.default_rng(23)
        lam_true = np.array([9.0, 2.0])
        phi = ortho_basis[1:3]
        n = 80
        scores = rng.normal(0.0, np.sqrt(lam_true), size=(n, 2))
        mean = 10.0 + 0.2 * day_grid.points
        ymat = mean[None, :] + scores @ phi + rng.normal(0.0, 0.3, size=(n, 96))
        model = fit_cluster_model(make_curves(day_grid, ymat), fve_threshold=0.9)
        w = day_grid.weights
        gram = (model.eigenfunctions * w[None, :]) @ model.eigenfunctions.T
        assert np.max(np.abs(gram - np.eye(len(model.eigenvalues)))) < 1e-8
        assert np.all(np.diff(model.eigenvalues) <= 1e-12)
        assert 1 <= model.num_components <= len(model.eigenvalues)
        fve = model.eigenvalues[: model.num_components].sum() / model.eigenvalues.sum()
        assert fve >= 0.9
        if model.num_components > 1:
            below = model.eigenvalues[: model.num_components - 1].sum()
            assert below / model.eigenvalues.sum() < 0.9
        assert model.bandwidths.mean is not None
        assert abs(model.eigenvalues[0] - 9.0) < 2.0
