import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_array_equal

from perinstance_dp.data_model import SyntheticConfig, default_theta0, generate_linear_gaussian
from perinstance_dp.errors import UnsupportedMechanismError
from perinstance_dp.experiments import check_crossdomain, check_generalization
from perinstance_dp.generalization import (
    PdpSampleSet,
    collect_pdp_samples,
    crossdomain_bound,
    crossdomain_taylor,
    empirical_crossdomain_gap,
    empirical_gap,
    gaussian_importance_weights,
    gen_bound,
)
from perinstance_dp.mechanisms import MechanismKind, MechanismSpec


def grouped(eps, delta=None, groups=None) -> PdpSampleSet:
    eps = np.asarray(eps, dtype=float)
    delta = np.zeros_like(eps) if delta is None else delta
    groups = np.arange(eps.size) // 2 if groups is None else groups
    return PdpSampleSet(eps, delta, groups)


class TestPdpSampleSet(TestCase):
    def test_validation(self):
        with self.assertRaises(ValueError):
            PdpSampleSet(np.array([-0.1]), np.array([0.0]))
        with self.assertRaises(ValueError):
            PdpSampleSet(np.array([np.inf]), np.array([0.0]))
        with self.assertRaises(ValueError):
            PdpSampleSet(np.array([0.1]), np.array([1.0]))
        with self.assertRaises(ValueError):
            PdpSampleSet(np.array([0.1, 0.2]), np.array([0.0]))
        with self.assertRaises(ValueError):
            PdpSampleSet(np.array([0.1, 0.2]), np.array([0.0, 0.0]), np.array([0]))

    def test_ungrouped_samples_form_one_group(self):
        samples = PdpSampleSet(np.array([0.1, 0.2]), np.array([0.0, 0.0]))
        self.assertEqual(len(samples.grouped()), 1)
        self.assertEqual(samples.size, 2)


class TestGenBound(TestCase):
    def test_zero_loss_gives_zero_bound(self):
        self.assertEqual(gen_bound(grouped(np.zeros(6))), 0.0)

    def test_constant_loss(self):
        self.assertAlmostEqual(gen_bound(grouped(np.full(6, 0.3))), math.exp(0.6) - 1.0, places=14)

    def test_delta_terms(self):
        samples = grouped(np.zeros(4), delta=np.full(4, 0.01))
        self.assertAlmostEqual(gen_bound(samples), 0.02, places=15)

    def test_groups_are_required(self):
        with self.assertRaises(ValueError):
            gen_bound(PdpSampleSet(np.zeros(3), np.zeros(3)))


class TestCrossDomain(TestCase):
    def test_zero_loss(self):
        bound = crossdomain_bound(grouped(np.zeros(4)), grouped(np.zeros(4)))
        self.assertEqual((bound.grouped, bound.pooled), (0.0, 0.0))

    def test_same_domain_reduces_to_second_moment(self):
        samples = grouped([0.1, 0.3, 0.2, 0.6])
        bound = crossdomain_bound(samples, samples)
        self.assertAlmostEqual(bound.pooled, float(np.mean(np.exp(2.0 * samples.eps_samples))) - 1.0, places=14)

    def test_pooled_bound_dominates_its_truncations(self):
        base = grouped([0.1, 0.3, 0.2, 0.6], delta=np.full(4, 1e-3))
        target = grouped([0.4, 0.05, 0.9, 0.2], delta=np.full(4, 1e-3))
        pooled = crossdomain_bound(base, target).pooled
        for order in (1, 2, 3):
            self.assertGreaterEqual(pooled, crossdomain_taylor(base, target, order))
        self.assertAlmostEqual(crossdomain_taylor(base, target, 40), pooled, places=12)

    def test_explicit_delta_sup(self):
        base = grouped([0.1, 0.3], delta=np.array([1e-3, 2e-3]))
        self.assertAlmostEqual(
            crossdomain_bound(base, base, delta_sup=0.01).pooled - crossdomain_bound(base, base).pooled,
            2.0 * (0.01 - 2e-3),
            places=14
        )
        with self.assertRaises(ValueError):
            crossdomain_bound(base, base, delta_sup=1e-4)

    def test_group_counts_must_match(self):
        with self.assertRaises(ValueError):
            crossdomain_bound(grouped(np.zeros(4)), grouped(np.zeros(6)))

    def test_order_must_be_positive(self):
        samples = grouped(np.zeros(2))
        with self.assertRaises(ValueError):
            crossdomain_taylor(samples, samples, 0)


class TestImportanceWeights(TestCase):
    def test_equal_noise_levels_give_unit_weights(self):
        cfg = SyntheticConfig(n=30, d=2, theta0=default_theta0(2, 0), sigma=1.0, clip_response=False)
        ds, theta0 = generate_linear_gaussian(cfg)
        assert_array_equal(gaussian_importance_weights(ds, theta0, 1.0, 1.0).rho, np.ones(30))

    def test_wider_target_upweights_large_residuals(self):
        cfg = SyntheticConfig(n=200, d=2, theta0=default_theta0(2, 1), sigma=1.0, seed=1, clip_response=False)
        ds, theta0 = generate_linear_gaussian(cfg)
        rho = gaussian_importance_weights(ds, theta0, 1.0, 2.0).rho
        residuals = np.abs(ds.y - ds.X @ theta0)
        self.assertGreater(rho[np.argmax(residuals)], rho[np.argmin(residuals)])
        with self.assertRaises(ValueError):
            gaussian_importance_weights(ds, theta0, 0.0, 1.0)


class TestSampling(TestCase):
    def test_collect_shapes(self):
        cfg = SyntheticConfig(n=20, d=2, theta0=default_theta0(2, 0), sigma=0.5)
        spec = MechanismSpec(mechanism=MechanismKind.OPS, lam=1.0, gamma=0.5)
        samples = collect_pdp_samples(spec, cfg, 1e-3, 3, 4, seed=2)
        self.assertEqual(samples.size, 12)
        assert_array_equal(samples.groups, np.repeat([0, 1, 2], 4))
        self.assertTrue(np.all(samples.delta_samples == 1e-3))
        self.assertTrue(np.all(samples.eps_samples > 0))

    def test_collect_is_deterministic(self):
        cfg = SyntheticConfig(n=20, d=2, theta0=default_theta0(2, 0), sigma=0.5)
        spec = MechanismSpec(mechanism=MechanismKind.GAUSS_FISHER, lam=1.0, gamma=0.5)
        first = collect_pdp_samples(spec, cfg, 1e-3, 2, 3, seed=5)
        second = collect_pdp_samples(spec, cfg, 1e-3, 2, 3, seed=5)
        assert_array_equal(first.eps_samples, second.eps_samples)

    def test_collect_rejects_unsupported_mechanisms(self):
        cfg = SyntheticConfig(n=20, d=2, theta0=default_theta0(2, 0), sigma=0.5)
        with self.assertRaises(UnsupportedMechanismError):
            collect_pdp_samples(MechanismSpec(mechanism=MechanismKind.OBJPERT, lam=1.0), cfg, 1e-3, 1, 1, seed=0)


class TestEmpiricalGap(TestCase):
    def test_noise_free_model_with_true_parameter(self):
        theta0 = default_theta0(2, 3)
        cfg = SyntheticConfig(n=20, d=2, theta0=theta0, sigma=0.0)
        estimate = empirical_gap(lambda ds, seed: theta0, cfg, trials=20)
        self.assertAlmostEqual(estimate.gap, 0.0, places=15)
        self.assertEqual(estimate.trials, 20)

    def test_measured_gap_respects_moment_bound(self):
        result = check_generalization(seed=1, trials=400)
        self.assertTrue(result.passed, result.detail)
        self.assertLessEqual(result.detail["gap"], 1.0)

    def test_too_few_trials(self):
        cfg = SyntheticConfig(n=20, d=2, theta0=default_theta0(2, 0), sigma=0.5)
        with self.assertRaises(ValueError):
            empirical_gap(MechanismSpec(mechanism=MechanismKind.OPS, lam=1.0), cfg, trials=1)

    def test_crossdomain_gap_needs_unclipped_responses(self):
        clipped = SyntheticConfig(n=20, d=2, theta0=default_theta0(2, 0), sigma=0.5)
        spec = MechanismSpec(mechanism=MechanismKind.OPS, lam=1.0, gamma=0.5)
        with self.assertRaises(ValueError):
            empirical_crossdomain_gap(spec, clipped, 1.0, trials=10)


    def test_gap_shrinks_with_sample_size(self):
        spec = MechanismSpec(mechanism=MechanismKind.OPS, lam=1.0, gamma=4.0)
        estimates = []
        for n in (20, 80, 320):
            cfg = SyntheticConfig(n=n, d=2, theta0=default_theta0(2, 6), sigma=0.5)
            estimates.append(empirical_gap(spec, cfg, trials=400, seed=n))
        for earlier, later in zip(estimates, estimates[1:]):
            self.assertLessEqual(later.gap, earlier.gap + 3.0 * math.hypot(earlier.stderr, later.stderr))
        self.assertLess(estimates[-1].gap, estimates[0].gap)


class TestShiftedTarget(TestCase):
    def setUp(self):
        self.cfg = SyntheticConfig(n=20, d=2, theta0=default_theta0(2, 0), sigma=0.5, clip_response=False)
        self.spec = MechanismSpec(mechanism=MechanismKind.OPS, lam=1.0, gamma=0.5)

    def test_measured_gap_below_paired_below_pooled(self):
        base = collect_pdp_samples(self.spec, self.cfg, 1e-3, 30, 10, seed=3)
        target = collect_pdp_samples(self.spec, self.cfg, 1e-3, 30, 10, seed=3, target_sigma=0.4)
        self.assertFalse(np.array_equal(base.eps_samples, target.eps_samples))

        bound = crossdomain_bound(base, target)
        gap = empirical_crossdomain_gap(self.spec, self.cfg, 0.4, trials=400, seed=5)
        self.assertLessEqual(gap.gap, bound.grouped + 3.0 * gap.stderr)
        self.assertLessEqual(bound.grouped, bound.pooled)

    def test_crossdomain_check_passes(self):
        result = check_crossdomain(seed=2, trials=300)
        self.assertTrue(result.passed, result.detail)
        self.assertLessEqual(result.detail["grouped"], result.detail["pooled"])
