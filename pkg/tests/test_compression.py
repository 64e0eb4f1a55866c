import numpy as np
import pytest

from oracles import eig_pca_oracle
from vflsim.compression import (compress, compress_data, compress_params,
                                decompress_gradient, fit_pca, load_plan,
                                ratio_to_k, save_plan)


@pytest.fixture
def random_matrix():
    return np.random.default_rng(7).normal(size=(50, 8))


class TestFitPca:
    def test_orthonormal_rows(self, random_matrix):
        for k in (1, 3, 8):
            plan = fit_pca(random_matrix, k)
            np.testing.assert_allclose(plan.W @ plan.W.T, np.eye(k), atol=1e-8)

    def test_explained_variance_non_increasing(self, random_matrix):
        plan = fit_pca(random_matrix, 8)
        assert np.all(np.diff(plan.explained_variance) <= 1e-9)

    def test_single_nonzero_column_gives_axis(self):
        X = np.zeros((10, 4))
        X[:, 2] = np.linspace(1, 2, 10)
        plan = fit_pca(X, 1)
        expected = np.zeros(4)
        expected[2] = 1.0
        np.testing.assert_allclose(plan.W[0], expected, atol=1e-12)

    def test_matches_eigendecomposition_oracle(self, random_matrix):
        plan = fit_pca(random_matrix, 5)
        oracle = eig_pca_oracle(random_matrix, 5)
        # rows agree up to sign
        for row, orow in zip(plan.W, oracle):
            assert abs(abs(row @ orow) - 1.0) < 1e-8

    def test_sign_convention_deterministic(self, random_matrix):
        a = fit_pca(random_matrix, 4)
        b = fit_pca(random_matrix.copy(), 4)
        np.testing.assert_array_equal(a.W, b.W)
        assert all(row[np.argmax(np.abs(row))] > 0 for row in a.W)

    def test_k_range_checked(self, random_matrix):
        with pytest.raises(ValueError):
            fit_pca(random_matrix, 0)
        with pytest.raises(ValueError):
            fit_pca(random_matrix, 9)

    def test_rank_deficient_still_orthonormal(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(20, 3)) @ rng.normal(size=(3, 6))
        plan = fit_pca(X, 5)
        np.testing.assert_allclose(plan.W @ plan.W.T, np.eye(5), atol=1e-8)

    def test_non_finite_rejected(self):
        X = np.zeros((4, 4))
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            fit_pca(X, 2)


class TestRatioToK:
    def test_reference_points(self):
        assert ratio_to_k(0.6, 10) == 6
        assert ratio_to_k(1.0, 7) == 7
        assert ratio_to_k(0.01, 10) == 1

    def test_range_checked(self):
        with pytest.raises(ValueError):
            ratio_to_k(0.0, 10)
        with pytest.raises(ValueError):
            ratio_to_k(1.2, 10)


class TestCompressDecompress:
    def test_full_rank_is_lossless(self, random_matrix):
        plan = fit_pca(random_matrix, 8)
        Z = compress_data(plan, random_matrix)
        np.testing.assert_allclose(Z @ plan.W, random_matrix, atol=1e-10)

    def test_zero_params_stay_zero(self, random_matrix):
        plan = fit_pca(random_matrix, 4)
        np.testing.assert_array_equal(compress_params(plan, np.zeros(8)), np.zeros(4))

    def test_compress_pair(self, random_matrix):
        plan = fit_pca(random_matrix, 5)
        theta = np.arange(8.0)
        theta_c, Z = compress(plan, theta, random_matrix)
        np.testing.assert_allclose(theta_c, theta @ plan.W.T)
        np.testing.assert_allclose(Z, random_matrix @ plan.W.T)

    def test_decompress_identity_at_full_dimension(self, random_matrix):
        plan = fit_pca(random_matrix, 8)
        g = np.random.default_rng(0).normal(size=8)
        g_c = g @ plan.W.T
        np.testing.assert_allclose(decompress_gradient(plan, g_c), g, atol=1e-10)

    def test_zero_gradient(self, random_matrix):
        plan = fit_pca(random_matrix, 3)
        np.testing.assert_array_equal(decompress_gradient(plan, np.zeros(3)), np.zeros(8))

    def test_projection_identity(self, random_matrix):
        # decompress(compress(v)) == v W^T W: orthogonal projection onto span(W)
        plan = fit_pca(random_matrix, 4)
        v = np.random.default_rng(2).normal(size=8)
        roundtrip = decompress_gradient(plan, v @ plan.W.T)
        np.testing.assert_allclose(roundtrip, v @ plan.W.T @ plan.W, atol=1e-12)

    def test_shape_errors(self, random_matrix):
        plan = fit_pca(random_matrix, 4)
        with pytest.raises(ValueError):
            compress_params(plan, np.zeros(5))
        with pytest.raises(ValueError):
            compress_data(plan, np.zeros((3, 5)))
        with pytest.raises(ValueError):
            decompress_gradient(plan, np.zeros(5))

    def test_rank_k_gradient_exactness(self):
        # rows in a k-dim subspace: compressed gradient path is exact
        rng = np.random.default_rng(5)
        basis = rng.normal(size=(4, 10))
        X = rng.normal(size=(30, 4)) @ basis
        plan = fit_pca(X, 4)
        d = rng.normal(size=30)
        g_full = X.T @ d
        g_c = compress_data(plan, X).T @ d
        np.testing.assert_allclose(decompress_gradient(plan, g_c), g_full, atol=1e-8)


class TestPlanExport:
    def test_roundtrip(self, tmp_path, random_matrix):
        plan = fit_pca(random_matrix, 3)
        path = str(tmp_path / "plan.csv")
        save_plan(plan, path)
        loaded = load_plan(path)
        np.testing.assert_allclose(loaded.W, plan.W, atol=1e-12)

    def test_rejects_non_orthonormal(self, tmp_path):
        path = str(tmp_path / "bad.csv")
        np.savetxt(path, np.ones((2, 4)), delimiter=",")
        with pytest.raises(ValueError, match="orthonormal"):
            load_plan(path)
