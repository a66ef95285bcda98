import os
from unittest import TestCase
from unittest.mock import patch

from perinstance_dp import settings
from perinstance_dp.accounting.bounds import calibrate_gaussian_eps, gaussian_delta_exact
from perinstance_dp.accounting.verify import McVerdict, verify_pdp_mc
from perinstance_dp.errors import SingularMatrixError
from perinstance_dp.experiments import check_mutation, check_ops_certification


class TestVerifyPdpMc(TestCase):
    def setUp(self):
        settings.get_worker_count.cache_clear()
        settings.get_mc_shard_size.cache_clear()

    def tearDown(self):
        settings.get_worker_count.cache_clear()
        settings.get_mc_shard_size.cache_clear()

    def test_identical_distributions(self):
        verdict = verify_pdp_mc([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 0.5, 1000, 0)
        self.assertEqual(verdict.delta_hat, (0.0, 0.0))
        self.assertEqual(verdict.stderr, (0.0, 0.0))

    def test_agrees_with_exact_divergence(self):
        for i, (m, eps) in enumerate(((0.5, 0.0), (1.0, 0.5), (2.0, 1.0))):
            verdict = verify_pdp_mc([0.0], [[1.0]], [m], [[1.0]], eps, 200_000, i)
            exact = gaussian_delta_exact(m, eps)
            for estimate, stderr in zip(verdict.delta_hat, verdict.stderr):
                self.assertLessEqual(abs(estimate - exact), 4.0 * stderr)

    def test_non_positive_definite_covariance(self):
        with self.assertRaises(SingularMatrixError):
            verify_pdp_mc([0.0], [[-1.0]], [0.0], [[1.0]], 0.5, 100, 0)

    def test_too_few_samples(self):
        with self.assertRaises(ValueError):
            verify_pdp_mc([0.0], [[1.0]], [1.0], [[1.0]], 0.5, 1, 0)

    def test_verdict_without_target(self):
        verdict = McVerdict(eps_tested=1.0, delta_hat=(0.1, 0.2), stderr=(0.01, 0.01), n_samples=100)
        self.assertEqual(verdict.worst_direction, 1)
        self.assertEqual(verdict.max_delta_hat, 0.2)
        self.assertIsNone(verdict.as_dict()["passed"])
        with self.assertRaises(ValueError):
            _ = verdict.passed

    def test_result_does_not_depend_on_worker_count(self):
        verdicts = []
        for workers in ("1", "4"):
            with patch.dict(os.environ, {"PDP_WORKERS": workers, "PDP_MC_SHARD_SIZE": "3000"}, clear=True):
                settings.get_worker_count.cache_clear()
                settings.get_mc_shard_size.cache_clear()
                verdicts.append(verify_pdp_mc([0.0, 0.0], [[1.0, 0.2], [0.2, 1.0]], [1.0, 0.0], [[1.0, 0.2], [0.2, 1.0]], 0.3, 10_000, 42))
        self.assertEqual(verdicts[0], verdicts[1])


class TestCertification(TestCase):
    def test_ops_bounds_are_certified(self):
        result = check_ops_certification(seed=3, instances=2, n_samples=50_000)
        self.assertTrue(result.passed, result.detail)
        self.assertEqual(len(result.detail["verdicts"]), 4)

    def test_halved_bound_is_rejected(self):
        self.assertTrue(check_mutation(seed=5, n_samples=100_000).passed)

    def test_exact_calibration_is_accepted(self):
        eps = calibrate_gaussian_eps(1.0, 1e-3)
        verdict = verify_pdp_mc([0.0], [[1.0]], [1.0], [[1.0]], eps, 100_000, 9, 1e-3)
        self.assertTrue(verdict.passed)
