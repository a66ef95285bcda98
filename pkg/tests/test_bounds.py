import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose
from scipy.stats import norm

from perinstance_dp.accounting.bounds import (
    OPS_DELTA_LIMIT,
    calibrate_gaussian_eps,
    gaussian_delta_exact,
    gaussian_dp_worst_case,
    gaussian_pdp,
    gaussian_pdp_classic,
    gaussian_calibration_table,
    ops_dp_agnostic,
    ops_pdp_agnostic,
    ops_pdp_bound,
    ops_pdp_from_geometry,
)
from perinstance_dp.data_model import DataPoint, Direction, SyntheticConfig, adjacent, default_theta0, generate_linear_gaussian
from perinstance_dp.errors import ParameterError, SingularMatrixError
from perinstance_dp.ridge_core import fit_ridge, min_eigenvalue, rank_one_update, residual


class TestGaussianBounds(TestCase):
    def test_zero_sensitivity(self):
        self.assertEqual(float(gaussian_pdp(0.0, 1.0, 0.05)), 0.0)

    def test_direct_evaluation(self):
        self.assertAlmostEqual(float(gaussian_pdp(1.0, 1.0, 0.05)), math.sqrt(math.log(25.0)), places=12)
        self.assertAlmostEqual(float(gaussian_pdp(1.0, 1.0, 0.05)), 1.7941, places=4)

    def test_isotropic_sigma_four_configuration(self):
        sensitivities = np.array([0.01, 0.1, 1.0])
        expected = sensitivities / 16.0 * math.sqrt(math.log(1.25e6))
        assert_allclose(gaussian_pdp(sensitivities, 1.0 / 16.0, 1e-6), expected, rtol=1e-14)

    def test_classic_calibration_scales_with_root_gamma(self):
        eps = gaussian_pdp_classic(2.0, 4.0, 1e-5)
        self.assertAlmostEqual(float(eps), 2.0 * 2.0 * math.sqrt(2.0 * math.log(1.25e5)), places=12)

    def test_invalid_delta(self):
        for delta in (0.0, 1.0, 1.5):
            with self.assertRaises(ParameterError):
                gaussian_pdp(1.0, 1.0, delta)

    def test_exact_delta_for_identical_distributions(self):
        for eps in (0.0, 0.5, 3.0):
            self.assertEqual(gaussian_delta_exact(0.0, eps), 0.0)

    def test_exact_delta_total_variation_case(self):
        self.assertAlmostEqual(gaussian_delta_exact(1.0, 0.0), norm.cdf(0.5) - norm.cdf(-0.5), places=12)
        self.assertAlmostEqual(gaussian_delta_exact(1.0, 0.0), 0.3829, places=4)

    def test_exact_delta_is_decreasing_in_eps(self):
        values = [gaussian_delta_exact(1.5, eps) for eps in np.linspace(0.0, 5.0, 21)]
        self.assertTrue(all(b <= a for a, b in zip(values, values[1:])))

    def test_calibration_inverts_exact_delta(self):
        for m in (0.1, 1.0, 3.0):
            eps = calibrate_gaussian_eps(m, 1e-5)
            self.assertAlmostEqual(gaussian_delta_exact(m, eps), 1e-5, delta=1e-9)
        self.assertEqual(calibrate_gaussian_eps(0.0, 1e-5), 0.0)

    def test_calibration_table_records_exact_delta(self):
        rows = gaussian_calibration_table([0.5, 1.0], [1.0, 4.0], 1e-5)
        self.assertEqual([(r.gamma, r.mahalanobis) for r in rows], [(1.0, 0.5), (1.0, 1.0), (4.0, 1.0), (4.0, 2.0)])
        for row in rows:
            self.assertEqual(row.within_target, row.delta_actual <= 1e-5)
            self.assertAlmostEqual(row.delta_actual, gaussian_delta_exact(row.mahalanobis, row.eps_printed))

    def test_worst_case_needs_regularization(self):
        with self.assertRaises(ParameterError):
            gaussian_dp_worst_case(100, 0.0, 1.0, 1e-6)
        expected = float(gaussian_pdp((1.0 + math.sqrt(100) / 2.0) / 1.0, 1.0, 1e-6))
        self.assertAlmostEqual(gaussian_dp_worst_case(100, 1.0, 1.0, 1e-6), expected)


class TestOpsBounds(TestCase):
    def test_zero_leverage(self):
        eps_out, eps_in = ops_pdp_from_geometry(0.0, 0.7, 1.0, 1e-3)
        self.assertEqual(float(eps_out), 0.0)
        self.assertEqual(float(eps_in), 0.0)

    def test_direct_evaluation_at_unit_log_term(self):
        delta = OPS_DELTA_LIMIT * (1.0 - 1e-12)
        eps_out, _ = ops_pdp_from_geometry(0.5, 0.0, 1.0, delta)
        self.assertAlmostEqual(float(eps_out), 0.5 * math.log(1.5) + 0.25, places=9)
        self.assertAlmostEqual(float(eps_out), 0.4527, places=4)

    def test_delta_above_tail_limit_is_rejected(self):
        with self.assertRaises(ParameterError):
            ops_pdp_from_geometry(0.5, 0.0, 1.0, OPS_DELTA_LIMIT)

    def test_bound_reports_both_expressions_and_minimum(self):
        cfg = SyntheticConfig(n=31, d=3, theta0=default_theta0(3, 2), sigma=0.5, seed=2)
        ds, _ = generate_linear_gaussian(cfg)
        z = ds.point(30)
        sol = fit_ridge(adjacent(ds, z, Direction.REMOVE), 1.0)
        bound = ops_pdp_bound(sol, z, 2.0, 1e-4)
        self.assertEqual(bound.eps, min(bound.eps_out, bound.eps_in))
        self.assertGreater(bound.eps_out, 0.0)
        self.assertGreater(bound.eps_in, 0.0)

    def test_zero_feature_target(self):
        sol = fit_ridge(generate_linear_gaussian(SyntheticConfig(n=10, d=2, theta0=np.array([1.0, 0.0]), sigma=0.1))[0], 1.0)
        bound = ops_pdp_bound(sol, DataPoint(np.zeros(2), 0.9), 1.0, 1e-3)
        self.assertEqual((bound.eps_out, bound.eps_in), (0.0, 0.0))

    def test_agnostic_pdp_collapses_at_zero_residual(self):
        value = ops_pdp_agnostic(2.0, 3.0, 1.5, 1e-4, 0.0)
        self.assertAlmostEqual(value, 1.5 * (1.0 + math.log(2e4)) / 10.0, places=12)

    def test_agnostic_pdp_degenerate_strength(self):
        with self.assertRaises(SingularMatrixError):
            ops_pdp_agnostic(0.0, 0.0, 1.0, 1e-4, 0.3)

    def test_agnostic_pdp_shrinks_with_sample_size(self):
        values = [ops_pdp_agnostic(math.sqrt(n), n / 5.0, 1.0, 1e-6, 1.0) for n in (100, 1000, 10_000, 100_000)]
        self.assertTrue(all(b <= a for a, b in zip(values, values[1:])))

    def test_agnostic_dp_regression_value(self):
        lam = math.sqrt(1000.0)
        log_term = math.log(2e6)
        expected = (
                math.sqrt(2.0 * (1000.0 + lam) * log_term / lam ** 2)
                + 2.0 * (1000.0 + lam) / (lam * lam)
                + (1.0 + log_term) / (2.0 * lam)
        )
        self.assertAlmostEqual(ops_dp_agnostic(1000, lam, 1.0, 1e-6), expected, places=12)

    def test_agnostic_dp_vanishes_without_information(self):
        self.assertLess(ops_dp_agnostic(1000, 10.0, 1e-12, 1e-6), 1e-4)
        with self.assertRaises(ParameterError):
            ops_dp_agnostic(1000, 0.0, 1.0, 1e-6)

    def test_per_point_bound_is_dominated_by_agnostic_bounds(self):
        n, d = 150, 3
        cfg = SyntheticConfig(n=n, d=d, theta0=default_theta0(d, 8), sigma=1.0, seed=8)
        ds, _ = generate_linear_gaussian(cfg)
        lam = math.sqrt(n)
        full = fit_ridge(ds, lam)
        for gamma in (1.0, 4.0):
            dp_eps = ops_dp_agnostic(n, lam, gamma, 1e-6)
            for z in ds:
                sol = rank_one_update(full, z, Direction.REMOVE)
                lambda_min = min_eigenvalue(adjacent(ds, z, Direction.REMOVE))
                eps_in = ops_pdp_bound(sol, z, gamma, 1e-6).eps_in
                agnostic = ops_pdp_agnostic(lam, lambda_min, gamma, 1e-6, residual(sol, z))
                self.assertLessEqual(eps_in, agnostic)
                self.assertLessEqual(agnostic, dp_eps)
