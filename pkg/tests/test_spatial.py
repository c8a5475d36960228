import numpy as np
import pytest

from fayherriot.core import Dataset, assemble_V
from fayherriot.errors import DataError, SingularCovarianceError
from fayherriot.simulate import SimDesign, monte_carlo
from fayherriot.spatial import (ProximityMatrix, SpatialConfig, SpatialParams, _Profile,
                                estimate_spatial, fitting_interval, rho_validity_interval,
                                sar_covariance, spatial_loglik)

from conftest import knn_weights, random_dataset

CYCLE = np.array([[0.0, 1.0], [1.0, 0.0]])


def dense_sar(W, s, rho, var):
    B = np.eye(len(W)) - rho * W
    Omega = s * np.linalg.inv(B.T @ B)
    return Omega, Omega + np.diag(var)


def dense_loglik(ds, W, s, rho, reml):
    _, G = dense_sar(W, s, rho, ds.var)
    Gi = np.linalg.inv(G)
    X = ds.X
    info = X.T @ Gi @ X
    beta = np.linalg.solve(info, X.T @ Gi @ ds.y)
    r = ds.y - X @ beta
    out = -0.5 * np.linalg.slogdet(G)[1] - 0.5 * r @ Gi @ r
    if reml:
        out -= 0.5 * np.linalg.slogdet(info)[1]
    return out


class TestProximityMatrix:
    def test_validation(self):
        with pytest.raises(DataError):
            ProximityMatrix(np.ones((2, 2)))
        with pytest.raises(DataError):
            ProximityMatrix(np.array([[0.0, 0.5], [1.0, 0.0]]))
        with pytest.raises(DataError):
            ProximityMatrix(np.array([[0.0, -1.0], [1.0, 0.0]]))
        ProximityMatrix(np.array([[0.0, 1.0], [0.0, 0.0]]))  # isolated area allowed

    def test_neighbor_lists_from_weights(self):
        W = ProximityMatrix(CYCLE, area_ids=("a", "b"))
        assert W.neighbor_lists == ((("b", 1.0),), (("a", 1.0),))


class TestSarCovariance:
    def test_rho_zero_nests_basic(self, rng):
        ds = random_dataset(rng, D=6)
        W = knn_weights(rng, 6, 2)
        Omega, G = sar_covariance(W, SpatialParams(0.7, 0.0), ds.var)
        np.testing.assert_array_equal(Omega, 0.7 * np.eye(6))
        np.testing.assert_array_equal(G, assemble_V(ds, 0.7))

    def test_zero_sigma(self, rng):
        W = knn_weights(rng, 5, 2)
        var = rng.uniform(0.5, 1, 5)
        Omega, G = sar_covariance(W, SpatialParams(0.0, 0.4), var)
        assert np.all(Omega == 0)
        np.testing.assert_array_equal(G, np.diag(var))

    def test_two_by_two_hand_inverse(self):
        Omega, _ = sar_covariance(CYCLE, SpatialParams(1.0, 0.5), [1.0, 1.0])
        np.testing.assert_allclose(Omega, np.array([[1.25, 1.0], [1.0, 1.25]]) / 0.5625,
                                   rtol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        D = int(rng.integers(3, 13))
        W = knn_weights(rng, D, min(3, D - 1))
        var = rng.uniform(0.2, 2, D)
        s, rho = rng.uniform(0.1, 2), rng.uniform(-0.5, 0.95)
        Omega, G = sar_covariance(W, SpatialParams(s, rho), var)
        Or, Gr = dense_sar(W, s, rho, var)
        assert np.linalg.norm(Omega - Or) <= 1e-10 * np.linalg.norm(Or)
        assert np.linalg.norm(G - Gr) <= 1e-10 * np.linalg.norm(Gr)
        assert np.abs(G - G.T).max() <= 1e-12 * np.abs(G).max()

    def test_singular_rho(self):
        with pytest.raises(SingularCovarianceError, match="rho=1.0"):
            sar_covariance(CYCLE, SpatialParams(1.0, 1.0), [1.0, 1.0])


class TestValidityInterval:
    def test_row_standardized_upper(self, rng):
        assert rho_validity_interval(knn_weights(rng, 20, 3))[1] == 1.0

    def test_cycle(self):
        lo, hi = rho_validity_interval(CYCLE)
        assert lo == pytest.approx(-1.0) and hi == 1.0

    def test_fitting_margin(self):
        lo, hi = fitting_interval(CYCLE)
        assert lo == pytest.approx(-1 + 1e-3) and hi == pytest.approx(1 - 1e-3)

    def test_determinant_scan(self, rng):
        W = knn_weights(rng, 30, 4)
        lo, hi = rho_validity_interval(W)
        for rho in np.linspace(lo, hi, 60)[1:-1]:
            assert np.isfinite(np.linalg.cond(np.eye(30) - rho * W))
            assert abs(np.linalg.det(np.eye(30) - rho * W)) > 0
        assert np.linalg.matrix_rank(np.eye(30) - W) < 30

    def test_proximity_matrix_cached(self, rng):
        W = ProximityMatrix(knn_weights(rng, 10, 2))
        assert rho_validity_interval(W) == rho_validity_interval(W.weights)
        assert "eig" in W._eig_cache


class TestLikelihood:
    @pytest.mark.parametrize("reml", [False, True])
    def test_dense_oracle(self, reml):
        rng = np.random.default_rng(3)
        for _ in range(10):
            D = int(rng.integers(5, 13))
            ds = random_dataset(rng, D=D, p=2)
            W = knn_weights(rng, D, 2)
            s, rho = rng.uniform(0.1, 2), rng.uniform(-0.5, 0.9)
            got = spatial_loglik(ds, W, SpatialParams(s, rho), "reml" if reml else "ml")
            assert got == pytest.approx(dense_loglik(ds, W, s, rho, reml), rel=1e-8)

    def test_rotated_profile_matches_dense(self, rng):
        from fayherriot import kernels
        ds = random_dataset(rng, D=12, p=2)
        W = knn_weights(rng, 12, 3)
        prof = _Profile(ds, W)
        for rho in (-0.4, 0.0, 0.5, 0.9):
            z, Xt, b = prof.rotate(rho)
            for s in (0.1, 1.0, 3.0):
                got = kernels.profile_loglik(z, Xt, np.ones(12), b, s, True) + prof.const
                ref = dense_loglik(ds, W, s, rho, True)
                assert got == pytest.approx(ref, rel=1e-10)


def _spatial_sample(seed, D=60, rho=0.6):
    from fayherriot.simulate import generate
    design = SimDesign(D=D, model="spatial", rho=rho, sigma_eps2=1.0, K1=5, K2=5,
                       variance_law="uniform", variance_params=(0.3, 1.0), seed=seed)
    return generate(design)


class TestEstimateSpatial:
    def test_argmax_against_random_points(self, rng):
        s = _spatial_sample(1)
        fit = estimate_spatial(s.dataset, s.W)
        assert fit.converged
        lo, hi = fitting_interval(s.W)
        for _ in range(100):
            phi = SpatialParams(rng.uniform(0, 5), rng.uniform(lo, hi))
            assert fit.log_likelihood >= spatial_loglik(s.dataset, s.W, phi) - 1e-9

    @pytest.mark.parametrize("method", ["ml", "reml"])
    def test_translation_invariance(self, method, rng):
        s = _spatial_sample(2)
        ds = s.dataset
        fit = estimate_spatial(ds, s.W, method)
        for _ in range(3):
            a = rng.standard_normal(ds.p) * 3
            moved = estimate_spatial(ds.with_y(ds.y - ds.X @ a), s.W, method)
            assert moved.sigma_eps2 == pytest.approx(fit.sigma_eps2, abs=1e-6)
            assert moved.rho == pytest.approx(fit.rho, abs=1e-6)
        neg = estimate_spatial(ds.with_y(-ds.y), s.W, method)
        assert neg.rho == pytest.approx(fit.rho, abs=1e-6)

    def test_deterministic(self):
        s = _spatial_sample(3)
        a, b = estimate_spatial(s.dataset, s.W), estimate_spatial(s.dataset, s.W)
        assert (a.sigma_eps2, a.rho) == (b.sigma_eps2, b.rho)

    def test_warm_start_agrees_with_full_grid(self):
        s = _spatial_sample(4)
        full = estimate_spatial(s.dataset, s.W)
        warm = estimate_spatial(s.dataset, s.W, config=SpatialConfig(start=(1.0, full.rho + 0.05)))
        assert warm.rho == pytest.approx(full.rho, abs=1e-5)

    def test_zero_sampling_variance_dense_path(self, rng):
        D = 30
        W = knn_weights(rng, D, 3)
        X = np.column_stack([np.ones(D), rng.standard_normal(D)])
        var = rng.uniform(0.3, 1, D)
        var[0] = 0.0
        y = X @ [1.0, 0.5] + rng.standard_normal(D)
        ds = Dataset.from_arrays(y, var, X, allow_zero_variance=True)
        fit = estimate_spatial(ds, W)
        assert fit.converged and fit.sigma_eps2 > 0

    def test_rejects_other_methods(self, rng):
        ds = random_dataset(rng, D=10)
        with pytest.raises(ValueError):
            estimate_spatial(ds, knn_weights(rng, 10, 2), "moments")

    def test_shape_mismatch(self, rng):
        ds = random_dataset(rng, D=10)
        with pytest.raises(DataError):
            estimate_spatial(ds, knn_weights(rng, 9, 2))

    def test_negative_rho_warns(self, caplog):
        s = _spatial_sample(5, rho=-0.8)
        fit = estimate_spatial(s.dataset, s.W)
        if fit.rho < 0:
            assert "negative" in caplog.text


@pytest.mark.slow
def test_null_rho_recovered_near_zero():
    design = SimDesign(D=100, model="spatial", rho=0.0, sigma_eps2=1.0, K1=5, K2=5,
                       variance_params=(0.5,), seed=21)
    rhos = monte_carlo(design, lambda s: estimate_spatial(s.dataset, s.W).rho, 30)
    assert abs(np.mean(rhos)) < 0.1
