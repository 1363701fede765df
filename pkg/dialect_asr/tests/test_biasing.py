import math
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from dialect_asr.biasing import (
    ContextFusionParams,
    FilterConfig,
    HotwordList,
    Posteriorgram,
    build_prompt,
    context_fuse,
    filter_scores,
    phrase_score_confidence,
    prompt_body,
    select_prompt_hotwords,
    sequence_order_confidence,
    two_stage_filter,
)
from dialect_asr.exceptions import (
    BiasingError,
    HotwordListError,
    PosteriorgramFormatError,
    PromptTokensMissingError,
    ShapeMismatchError,
    TokenRangeError,
)
from dialect_asr.synth import random_posteriorgram
from dialect_asr.tokenizer import PROMPT_END, PROMPT_START, TokenizerConfig, build_tokenizer, encode


def worked_posteriorgram():
    return Posteriorgram.from_probs([[0.9, 0.1], [0.2, 0.8]])


AB, BA = [0, 1], [1, 0]


class PosteriorgramTests(SimpleTestCase):
    def test_rows_must_be_distributions(self):
        with self.assertRaises(PosteriorgramFormatError):
            Posteriorgram(np.log([[0.5, 0.4]]))
        with self.assertRaises(PosteriorgramFormatError):
            Posteriorgram([[math.nan, 0.0]])
        with self.assertRaises(PosteriorgramFormatError):
            Posteriorgram(np.zeros((0, 3)))

    def test_binary_form_round_trips(self):
        pg = random_posteriorgram(6, 9, seed=4)
        loaded = Posteriorgram.from_bytes(pg.to_bytes())
        np.testing.assert_allclose(loaded.log_probs, pg.log_probs, atol=1e-5)

    def test_binary_form_rejects_bad_magic_and_length(self):
        data = random_posteriorgram(2, 3, seed=0).to_bytes()
        with self.assertRaises(PosteriorgramFormatError):
            Posteriorgram.from_bytes(b"XXXXXXXX" + data[8:])
        with self.assertRaises(PosteriorgramFormatError):
            Posteriorgram.from_bytes(data[:-4])


class ConfidenceTests(SimpleTestCase):
    def test_worked_example(self):
        pg = worked_posteriorgram()
        expected = (math.log(0.9) + math.log(0.8)) / 2
        self.assertAlmostEqual(phrase_score_confidence(pg, AB), expected)
        self.assertAlmostEqual(phrase_score_confidence(pg, BA), expected)
        self.assertAlmostEqual(sequence_order_confidence(pg, AB), expected)
        self.assertAlmostEqual(sequence_order_confidence(pg, BA), (math.log(0.1) + math.log(0.2)) / 2)
        self.assertAlmostEqual(expected, -0.164, places=3)

    def test_uniform_frame(self):
        pg = Posteriorgram.from_probs([[0.25] * 4])
        self.assertAlmostEqual(phrase_score_confidence(pg, [2]), math.log(0.25))

    def test_phrase_longer_than_posteriorgram(self):
        pg = Posteriorgram.from_probs([[0.5, 0.5]])
        self.assertEqual(sequence_order_confidence(pg, [0, 1]), -math.inf)

    def test_whole_phrase_scores(self):
        pg = worked_posteriorgram()
        self.assertAlmostEqual(phrase_score_confidence(pg, AB, length_normalize=False), math.log(0.72))

    def test_token_outside_vocabulary(self):
        with self.assertRaises(TokenRangeError):
            phrase_score_confidence(worked_posteriorgram(), [2])

    def test_order_score_never_exceeds_phrase_score(self):
        generator = np.random.default_rng(0)
        for case in range(1000):
            frames, vocab = int(generator.integers(1, 7)), int(generator.integers(2, 7))
            pg = random_posteriorgram(frames, vocab, seed=case)
            phrase = generator.integers(0, vocab, size=int(generator.integers(1, 5))).tolist()
            self.assertLessEqual(sequence_order_confidence(pg, phrase), phrase_score_confidence(pg, phrase) + 1e-12)


class FilterTests(SimpleTestCase):
    def setUp(self):
        self.hotwords = HotwordList.from_token_lists([AB, BA])

    def test_worked_example_keeps_only_the_ordered_phrase(self):
        kept = two_stage_filter(worked_posteriorgram(), self.hotwords, FilterConfig(-1.0, -1.0))
        self.assertEqual(kept.texts, ["0 1"])
        scores = filter_scores(worked_posteriorgram(), self.hotwords, FilterConfig(-1.0, -1.0))
        self.assertEqual([(s.kept_by_psc, s.kept) for s in scores], [(True, True), (True, False)])

    def test_empty_and_vacuous_filters(self):
        pg = worked_posteriorgram()
        self.assertEqual(len(two_stage_filter(pg, HotwordList(), FilterConfig())), 0)
        self.assertEqual(two_stage_filter(pg, self.hotwords, FilterConfig(-math.inf, -math.inf)), self.hotwords)

    def test_raising_thresholds_never_grows_the_output(self):
        hotwords = HotwordList.from_token_lists([[1], [2, 3], [4, 5, 6], [7, 1], [3, 2]])
        pg = random_posteriorgram(8, 8, seed=5)
        previous = None
        for threshold in (-9.0, -6.0, -4.0, -3.0, -2.0, -1.0, 0.0):
            kept = set(two_stage_filter(pg, hotwords, FilterConfig(threshold, threshold)).texts)
            if previous is not None:
                self.assertLessEqual(kept, previous)
            previous = kept

    def test_prompt_selection_uses_one_threshold(self):
        kept = select_prompt_hotwords(worked_posteriorgram(), self.hotwords, threshold=-1.0)
        self.assertEqual(kept.texts, ["0 1"])

    def test_thresholds_must_be_real(self):
        with self.assertRaises(BiasingError):
            FilterConfig(math.nan, -4.0)
        with self.assertRaises(BiasingError):
            FilterConfig(-4.0, math.inf)


class PromptTests(SimpleTestCase):
    def setUp(self):
        self.model = build_tokenizer(["北京上海广州深圳天津 我在这里说话"], TokenizerConfig(target_vocab_size=200))
        self.hotwords = HotwordList.from_texts(["北京", "上海", "广州", "深圳", "天津"], self.model)

    def test_same_seed_same_prompt(self):
        first = build_prompt("我在北京说话", self.hotwords, 2, 7, self.model)
        self.assertEqual(first, build_prompt("我在北京说话", self.hotwords, 2, 7, self.model))
        self.assertEqual(first.ids[0], self.model.token_id(PROMPT_START))
        self.assertEqual(first.ids[-1], self.model.token_id(PROMPT_END))
        self.assertEqual(len(prompt_body(first, self.model)), 6)

    def test_present_phrase_always_appears_and_distractors_are_absent(self):
        beijing = encode("北京", self.model).ids
        for seed in range(100):
            body = prompt_body(build_prompt("我在北京说话", self.hotwords, 2, seed, self.model), self.model)
            pairs = [body[i:i + 2] for i in range(0, len(body), 2)]
            self.assertEqual(pairs.count(beijing), 1)
            self.assertEqual(len(set(pairs)), 3)

    def test_seeds_only_permute_a_fixed_phrase_set(self):
        bodies = [prompt_body(build_prompt("北京上海", self.hotwords, 0, seed, self.model), self.model)
                  for seed in range(100)]
        self.assertEqual({tuple(sorted(body)) for body in bodies}, {tuple(sorted(bodies[0]))})
        self.assertGreater(len(set(bodies)), 1)

    def test_empty_list_gives_bare_delimiters(self):
        prompt = build_prompt("北京", HotwordList(), 3, 0, self.model)
        self.assertEqual(prompt.to_list(), [self.model.token_id(PROMPT_START), self.model.token_id(PROMPT_END)])

    def test_separator_between_phrases(self):
        prompt = build_prompt("北京上海", self.hotwords, 0, 0, self.model, separator="<eos>")
        self.assertEqual(prompt_body(prompt, self.model).count(self.model.token_id("<eos>")), 1)

    def test_model_without_prompt_tokens(self):
        bare = build_tokenizer(["北京"], TokenizerConfig(
            target_vocab_size=100, specials={"blank": ("<blank>",), "unk": ("<unk>",)}))
        with self.assertRaises(PromptTokensMissingError):
            build_prompt("北京", HotwordList.from_texts(["北京"], bare), 0, 0, bare)

    def test_duplicate_hotwords(self):
        with self.assertRaises(HotwordListError):
            HotwordList.from_texts(["北京", "北京 "], self.model)


class ContextFusionTests(SimpleTestCase):
    def setUp(self):
        self.params = ContextFusionParams.random_init(20, 8, 6, n_heads=2, seed=0)
        self.hidden = np.random.default_rng(1).normal(size=(5, 8))
        self.hotwords = HotwordList.from_token_lists([[1, 2], [3], [4, 5, 6]])

    def test_empty_list_is_identity(self):
        np.testing.assert_array_equal(context_fuse(self.hidden, HotwordList(), self.params), self.hidden)

    def test_zero_output_projection_is_identity(self):
        params = replace(self.params, w_o=np.zeros((8, 8)))
        np.testing.assert_array_equal(context_fuse(self.hidden, self.hotwords, params), self.hidden)

    def test_phrase_order_does_not_matter(self):
        permuted = HotwordList(tuple(self.hotwords.phrases[i] for i in (2, 0, 1)))
        np.testing.assert_allclose(
            context_fuse(self.hidden, self.hotwords, self.params),
            context_fuse(self.hidden, permuted, self.params),
            atol=1e-9,
        )

    def test_attention_rows_are_distributions(self):
        result = context_fuse(self.hidden, self.hotwords, self.params, return_attention=True)
        self.assertEqual(result.attention.shape, (2, 5, 4))
        np.testing.assert_allclose(result.attention.sum(axis=-1), 1.0, atol=1e-9)
        self.assertFalse(np.allclose(result.output, self.hidden))

    def test_shape_checks(self):
        with self.assertRaises(ShapeMismatchError):
            context_fuse(np.zeros((5, 7)), self.hotwords, self.params)
        with self.assertRaises(ShapeMismatchError):
            replace(self.params, n_heads=3)
        with self.assertRaises(TokenRangeError):
            context_fuse(self.hidden, HotwordList.from_token_lists([[25]]), self.params)
