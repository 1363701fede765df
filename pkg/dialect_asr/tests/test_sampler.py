from collections import Counter

from django.test import SimpleTestCase

from dialect_asr.datapipe import ManifestRecord
from dialect_asr.exceptions import EmptySpecError, InvalidAlphaError, SamplingError
from dialect_asr.sampler import (
    SamplingPlan,
    SamplingSpec,
    draw_stream,
    plan_from_records,
    sampling_probabilities,
    strategy_alpha,
)


def plan_for(sizes, alpha, seed=0):
    return sampling_probabilities(SamplingSpec.from_sizes(sizes, alpha), seed=seed)


class SamplingProbabilityTests(SimpleTestCase):
    def test_natural_sampling_follows_sizes(self):
        probabilities = plan_for([3, 1], 1.0).probabilities
        self.assertAlmostEqual(probabilities[0], 0.75)
        self.assertAlmostEqual(probabilities[1], 0.25)

    def test_alpha_zero_is_uniform(self):
        for p in plan_for([1000, 10, 1], 0.0).probabilities:
            self.assertAlmostEqual(p, 1 / 3)

    def test_square_root_smoothing(self):
        self.assertAlmostEqual(plan_for([100, 1], 0.5).probabilities[0], 10 / 11)

    def test_probabilities_sum_to_one_for_huge_sizes(self):
        self.assertAlmostEqual(sum(plan_for([1e300, 1e-300, 5.0], 0.7).probabilities), 1.0)

    def test_smaller_alpha_flattens_the_distribution(self):
        sizes = [500, 50, 5]
        largest = [plan_for(sizes, alpha).probabilities[0] for alpha in (1.0, 0.7, 0.3, 0.0)]
        self.assertEqual(largest, sorted(largest, reverse=True))

    def test_scaling_every_size_changes_nothing(self):
        base = plan_for([40, 7, 3], 0.6).probabilities
        scaled = plan_for([40e6, 7e6, 3e6], 0.6).probabilities
        for left, right in zip(base, scaled):
            self.assertAlmostEqual(left, right, places=12)

    def test_alpha_near_one_approaches_natural(self):
        natural = plan_for([9, 1], 1.0).probabilities
        gaps = [abs(plan_for([9, 1], alpha).probabilities[0] - natural[0]) for alpha in (0.9, 0.99, 0.999)]
        self.assertEqual(gaps, sorted(gaps, reverse=True))
        self.assertLess(gaps[-1], 1e-3)

    def test_invalid_specs(self):
        with self.assertRaises(InvalidAlphaError):
            SamplingSpec.from_sizes([1, 2], 1.5)
        with self.assertRaises(EmptySpecError):
            SamplingSpec.from_sizes([], 0.5)
        with self.assertRaises(SamplingError):
            SamplingSpec.from_sizes([0, 2], 0.5)

    def test_strategies(self):
        self.assertEqual(strategy_alpha("natural", 0.3), 1.0)
        self.assertEqual(strategy_alpha("uniform", 0.3), 0.0)
        self.assertEqual(strategy_alpha("temperature", 0.3), 0.3)
        with self.assertRaises(SamplingError):
            strategy_alpha("greedy", 0.3)


class DrawStreamTests(SimpleTestCase):
    def test_empirical_frequencies_match_the_plan(self):
        plan = plan_for([3, 1], 1.0, seed=11)
        draws = draw_stream(plan, [30, 10], 100_000)
        counts = Counter(dataset for dataset, _ in draws)
        self.assertAlmostEqual(counts[0] / len(draws), 0.75, delta=0.01)
        self.assertTrue(all(0 <= item < (30, 10)[dataset] for dataset, item in draws))

    def test_same_plan_same_stream(self):
        plan = plan_for([5, 2, 1], 0.5, seed=3)
        self.assertEqual(draw_stream(plan, [5, 2, 1], 500), draw_stream(plan, [5, 2, 1], 500))
        other = plan_for([5, 2, 1], 0.5, seed=4)
        self.assertNotEqual(draw_stream(plan, [5, 2, 1], 500), draw_stream(other, [5, 2, 1], 500))

    def test_zero_length_and_bad_counts(self):
        plan = plan_for([1, 1], 0.5)
        self.assertEqual(draw_stream(plan, [1, 1], 0), [])
        with self.assertRaises(SamplingError):
            draw_stream(plan, [1], 10)
        with self.assertRaises(SamplingError):
            draw_stream(plan, [1, 0], 10)

    def test_plan_survives_serialization(self):
        plan = plan_for([7, 3], 0.5, seed=9)
        self.assertEqual(SamplingPlan.from_dict(plan.to_dict()), plan)

    def test_foreign_generator_is_refused(self):
        payload = plan_for([7, 3], 0.5).to_dict()
        payload["prng"] = "mt19937"
        with self.assertRaises(SamplingError):
            SamplingPlan.from_dict(payload)


class PlanFromRecordsTests(SimpleTestCase):
    def records(self):
        rows = [("a", 10.0)] * 3 + [("b", 3600.0)]
        return [ManifestRecord(f"u{index}", "", duration, "x", dataset=name) for index, (name, duration) in enumerate(rows)]

    def test_sizes_in_utterances(self):
        plan = plan_from_records(self.records(), 1.0)
        self.assertEqual(plan.names, ("a", "b"))
        self.assertEqual(plan.sizes, (3, 1))

    def test_sizes_in_hours(self):
        plan = plan_from_records(self.records(), 1.0, size_unit="hours")
        self.assertAlmostEqual(plan.sizes[1], 1.0)
        self.assertGreater(plan.probabilities[1], plan.probabilities[0])
