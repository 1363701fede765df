import random

from django.test import SimpleTestCase

from dialect_asr.exceptions import EmptyReferenceError, ZeroBaselineError
from dialect_asr.metrics import (
    OpKind,
    align,
    count_errors,
    evaluate,
    evaluate_corpus,
    rer,
    rer_report,
    scoring_units,
    tag_biased,
)


def edit_distance(ref, hyp):
    previous = list(range(len(hyp) + 1))
    for i, left in enumerate(ref, start=1):
        current = [i]
        for j, right in enumerate(hyp, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (left != right)))
        previous = current
    return previous[-1]


class AlignTests(SimpleTestCase):
    def test_error_count_matches_edit_distance(self):
        generator = random.Random(0)
        for _ in range(500):
            ref = [generator.choice("abc") for _ in range(generator.randint(0, 8))]
            hyp = [generator.choice("abc") for _ in range(generator.randint(0, 8))]
            self.assertEqual(align(ref, hyp).errors, edit_distance(ref, hyp))

    def test_substitution_preferred_over_delete_and_insert(self):
        self.assertEqual([op.kind for op in align("ab", "ba").ops], [OpKind.SUBSTITUTE, OpKind.SUBSTITUTE])

    def test_single_deletion(self):
        alignment = align("abc", "ac")
        self.assertEqual([op.kind for op in alignment.ops], [OpKind.MATCH, OpKind.DELETE, OpKind.MATCH])
        self.assertEqual(alignment.ops[1].ref_pos, 1)

    def test_empty_sides(self):
        self.assertEqual(align("", "xy").count(OpKind.INSERT), 2)
        self.assertEqual(align("xy", "").count(OpKind.DELETE), 2)


class BiasedErrorTests(SimpleTestCase):
    def test_worked_example(self):
        report = evaluate(list("我爱北京"), list("我爱南京"), [list("北京")])
        self.assertAlmostEqual(report.wer, 25.0)
        self.assertAlmostEqual(report.bwer, 50.0)
        self.assertAlmostEqual(report.uwer, 0.0)
        self.assertEqual(report.format_table(), "25.00 (50.00 | 0.00)")

    def test_overlapping_hotwords_cover_the_union(self):
        self.assertEqual(tag_biased("abc", ["ab", "bc"]), [True, True, True])
        self.assertEqual(tag_biased("abcab", ["ab"]), [True, True, False, True, True])

    def test_insertion_attribution(self):
        counts = count_errors(list("我爱"), list("我北爱了"), [list("北京")])
        self.assertEqual((counts.biased_insertions, counts.unbiased_insertions), (1, 1))

    def test_errors_split_without_loss(self):
        generator = random.Random(1)
        for _ in range(1000):
            ref = [generator.choice("abcd") for _ in range(generator.randint(1, 8))]
            hyp = [generator.choice("abcd") for _ in range(generator.randint(0, 8))]
            hotwords = [[generator.choice("abcd") for _ in range(generator.randint(1, 3))]]
            counts = count_errors(ref, hyp, hotwords)
            self.assertEqual(counts.biased_errors + counts.unbiased_errors, align(ref, hyp).errors)

    def test_no_hotwords_means_uwer_equals_wer(self):
        report = evaluate(list("abcd"), list("abd"))
        self.assertIsNone(report.bwer)
        self.assertEqual(report.uwer, report.wer)
        self.assertEqual(report.format_table(), "25.00 (- | 25.00)")

    def test_more_hotwords_never_shrink_the_biased_set(self):
        generator = random.Random(2)
        for _ in range(500):
            ref = [generator.choice("abcd") for _ in range(generator.randint(1, 10))]
            hotwords = [[generator.choice("abcd") for _ in range(generator.randint(1, 3))] for _ in range(3)]
            smaller = sum(tag_biased(ref, hotwords[:1]))
            self.assertLessEqual(smaller, sum(tag_biased(ref, hotwords)))

    def test_corpus_rates_sum_counts(self):
        report = evaluate_corpus([(list("ab"), list("ab")), (list("cdef"), list("cxef"))], [["d", "e"]])
        self.assertAlmostEqual(report.wer, 100 / 6)
        self.assertAlmostEqual(report.bwer, 50.0)

    def test_empty_reference(self):
        with self.assertRaises(EmptyReferenceError):
            evaluate([], ["a"])
        with self.assertRaises(EmptyReferenceError):
            evaluate_corpus([])


class RelativeReductionTests(SimpleTestCase):
    def test_published_reductions(self):
        for before, after, expected in (
            (18.76, 6.42, 65.8),
            (10.77, 4.85, 55.0),
            (11.93, 0.47, 96.1),
            (3.56, 1.26, 64.6),
            (15.15, 2.33, 84.6),
            (1.94, 1.64, 15.5),
            (1.48, 1.51, -2.0),
            (1.20, 1.09, 9.17),
        ):
            self.assertAlmostEqual(rer(before, after), expected, delta=0.05)

    def test_same_rate_means_no_reduction(self):
        for value in (0.47, 1.0, 18.76, 250.0):
            self.assertEqual(rer(value, value), 0.0)

    def test_worse_after_means_smaller_reduction(self):
        afters = [0.0, 0.5, 1.0, 2.5, 6.42, 18.76, 30.0]
        reductions = [rer(18.76, after) for after in afters]
        self.assertEqual(reductions, sorted(reductions, reverse=True))
        self.assertEqual(len(set(reductions)), len(reductions))

    def test_zero_baseline(self):
        with self.assertRaises(ZeroBaselineError):
            rer(0.0, 1.0)

    def test_report_skips_missing_rates(self):
        before = evaluate(list("我爱北京"), list("我爱南京"), [list("北京")])
        after = evaluate(list("我爱北京"), list("我爱北京"), [list("北京")])
        reduction = rer_report(before, after)
        self.assertEqual((reduction.wer, reduction.bwer, reduction.uwer), (100.0, 100.0, None))
        self.assertEqual(reduction.format_table(), "100.0 (100.0 | -)")


class ScoringUnitTests(SimpleTestCase):
    def test_cjk_per_character_and_words_by_space(self):
        self.assertEqual(scoring_units("我爱 Hello World北京"), ["我", "爱", "hello", "world", "北", "京"])
