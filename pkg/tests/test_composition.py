import math
from unittest import TestCase

from perinstance_dp.accounting.composition import (
    PdpBudget,
    advanced_composition_crossover,
    compose_advanced,
    compose_simple,
    group_privacy,
)
from perinstance_dp.errors import ParameterError


class TestComposition(TestCase):
    def test_simple_composition_adds_budgets(self):
        total = compose_simple([PdpBudget(0.1, 1e-6), PdpBudget(0.4, 2e-6)])
        self.assertAlmostEqual(total.eps, 0.5, places=15)
        self.assertAlmostEqual(total.delta, 3e-6, places=18)

    def test_empty_composition_is_free(self):
        self.assertEqual(compose_simple([]), PdpBudget(0.0, 0.0))

    def test_advanced_composition_value(self):
        total = compose_advanced(0.1, 0.0, 10, 1e-6)
        expected = math.sqrt(20.0 * math.log(1e6)) * 0.1 + 10 * 0.1 * math.expm1(0.1)
        self.assertAlmostEqual(total.eps, expected, places=14)
        self.assertAlmostEqual(total.eps, 1.76743, places=5)
        self.assertEqual(total.delta, 1e-6)

    def test_advanced_composition_beats_linear_past_crossover(self):
        crossover = advanced_composition_crossover(0.1, 1e-6)
        self.assertEqual(crossover, 35)
        self.assertGreaterEqual(compose_advanced(0.1, 0.0, 34, 1e-6).eps, 3.4)
        self.assertLess(compose_advanced(0.1, 0.0, 100, 1e-6).eps, 10.0)

    def test_crossover_may_not_exist(self):
        self.assertIsNone(advanced_composition_crossover(0.1, 1e-6, k_max=10))

    def test_invalid_slack(self):
        with self.assertRaises(ParameterError):
            compose_advanced(0.1, 0.0, 10, 0.0)
        with self.assertRaises(ParameterError):
            compose_advanced(0.1, 0.0, -1, 1e-6)


class TestGroupPrivacy(TestCase):
    def test_group_of_two(self):
        budget = group_privacy([0.1, 0.2], [1e-6, 1e-6])
        self.assertAlmostEqual(budget.eps, 0.3, places=15)
        self.assertAlmostEqual(budget.delta, 1e-6 * (1.0 + math.exp(0.1)), places=18)

    def test_length_mismatch(self):
        with self.assertRaises(ParameterError):
            group_privacy([0.1, 0.2], [1e-6])


class TestPdpBudget(TestCase):
    def test_invalid_budgets(self):
        for eps, delta in ((-0.1, 0.0), (0.1, 1.0), (0.1, -1e-9), (math.nan, 0.0)):
            with self.assertRaises(ParameterError):
                PdpBudget(eps, delta)
