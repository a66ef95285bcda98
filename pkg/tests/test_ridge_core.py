import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose

from perinstance_dp.data_model import DataPoint, Dataset, Direction, SyntheticConfig, adjacent, default_theta0, generate_linear_gaussian
from perinstance_dp.errors import DimensionError, SingularMatrixError
from perinstance_dp.ridge_core import factorize_spd, fit_ridge, leverage, log_det, min_eigenvalue, rank_one_update, residual


def random_instance(seed: int, n: int, d: int) -> tuple[Dataset, DataPoint]:
    cfg = SyntheticConfig(n=n + 1, d=d, theta0=default_theta0(d, seed), sigma=0.5, seed=seed)
    ds, _ = generate_linear_gaussian(cfg)
    return Dataset(ds.X[:n], ds.y[:n]), ds.point(n)


class TestFitRidge(TestCase):
    def test_two_point_least_squares(self):
        sol = fit_ridge(Dataset(np.array([[1.0], [1.0]]), np.array([1.0, 0.0])), 0.0)
        assert_allclose(sol.theta_hat, [0.5])
        self.assertEqual(sol.n, 2)

    def test_ridge_matches_normal_equations(self):
        ds, _ = random_instance(3, 40, 4)
        sol = fit_ridge(ds, 0.7)
        expected = np.linalg.solve(ds.X.T @ ds.X + 0.7 * np.eye(4), ds.X.T @ ds.y)
        assert_allclose(sol.theta_hat, expected, rtol=1e-10)

    def test_solution_arrays_are_read_only(self):
        sol = fit_ridge(random_instance(1, 10, 2)[0], 1.0)
        with self.assertRaises(ValueError):
            sol.theta_hat[0] = 1.0

    def test_negative_lambda(self):
        with self.assertRaises(ValueError):
            fit_ridge(random_instance(1, 10, 2)[0], -1.0)

    def test_rank_deficient_design_is_singular(self):
        ds = Dataset(np.array([[1.0, 0.0], [2.0, 0.0]]), np.array([1.0, 2.0]))
        with self.assertRaises(SingularMatrixError) as ctx:
            fit_ridge(ds, 0.0)
        self.assertAlmostEqual(ctx.exception.smallest_eigenvalue, 0.0, places=10)

    def test_empty_dataset_needs_regularization(self):
        with self.assertRaises(SingularMatrixError):
            fit_ridge(Dataset.empty(3), 0.0)
        assert_allclose(fit_ridge(Dataset.empty(3), 1.0).theta_hat, np.zeros(3))

    def test_non_symmetric_matrix(self):
        with self.assertRaises(ValueError):
            factorize_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestRankOneIdentities(TestCase):
    def test_identity_design_leverage(self):
        sol = fit_ridge(Dataset(np.eye(2), np.array([1.0, 1.0])), 0.0)
        pair = leverage(sol, np.array([1.0, 0.0]))
        self.assertAlmostEqual(pair.mu, 1.0, places=14)
        self.assertAlmostEqual(pair.mu_prime, 0.5, places=14)

    def test_adding_a_row_to_identity_design(self):
        sol = fit_ridge(Dataset(np.eye(2), np.array([1.0, 1.0])), 0.0)
        sol_with = rank_one_update(sol, DataPoint(np.array([1.0, 0.0]), 1.0), Direction.ADD)
        assert_allclose(sol_with.H, np.diag([2.0, 1.0]))
        assert_allclose(sol_with.theta_hat, [1.0, 1.0], rtol=1e-12)

    def test_identities_on_random_instances(self):
        for i, lam in enumerate([0.0, 0.1, 1.0] * 10):
            rng = np.random.default_rng(i)
            d = int(rng.integers(1, 8))
            n = int(rng.integers(d + 5, 120))
            ds, z = random_instance(100 + i, n, d)
            sol = fit_ridge(ds, lam)
            sol_with = rank_one_update(sol, z, Direction.ADD)
            refit = fit_ridge(adjacent(ds, z, Direction.ADD), lam)

            mu = leverage(sol, z.x).mu
            self.assertAlmostEqual(leverage(sol, z.x).mu_prime, mu / (1.0 + mu), places=14)
            self.assertAlmostEqual(leverage(sol_with, z.x).mu, mu / (1.0 + mu), delta=1e-10)
            self.assertAlmostEqual(log_det(sol_with), log_det(sol) + math.log1p(mu), delta=1e-8 * max(1.0, abs(log_det(sol))))
            self.assertAlmostEqual(residual(sol_with, z), residual(sol, z) / (1.0 + mu), delta=1e-10)
            assert_allclose(sol_with.theta_hat, refit.theta_hat, rtol=1e-10, atol=1e-10)
            self.assertEqual(sol_with.n, n + 1)

    def test_remove_undoes_add(self):
        ds, z = random_instance(7, 30, 3)
        sol = fit_ridge(ds, 0.5)
        back = rank_one_update(rank_one_update(sol, z, Direction.ADD), z, Direction.REMOVE)
        assert_allclose(back.theta_hat, sol.theta_hat, rtol=1e-10, atol=1e-12)
        self.assertEqual(back.n, sol.n)

    def test_leverage_dimension_check(self):
        sol = fit_ridge(random_instance(2, 10, 2)[0], 1.0)
        with self.assertRaises(DimensionError):
            leverage(sol, np.ones(3))

    def test_zero_feature_has_zero_leverage(self):
        sol = fit_ridge(random_instance(2, 10, 2)[0], 1.0)
        pair = leverage(sol, np.zeros(2))
        self.assertEqual((pair.mu, pair.mu_prime), (0.0, 0.0))


class TestMinEigenvalue(TestCase):
    def test_identity_design(self):
        self.assertAlmostEqual(min_eigenvalue(Dataset(np.eye(3), np.zeros(3))), 1.0, places=12)

    def test_empty_dataset(self):
        self.assertEqual(min_eigenvalue(Dataset.empty(2)), 0.0)

    def test_zero_column_gives_zero(self):
        ds = Dataset(np.array([[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]]), np.zeros(3))
        self.assertAlmostEqual(min_eigenvalue(ds), 0.0, places=12)
