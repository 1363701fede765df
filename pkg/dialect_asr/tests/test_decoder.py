import itertools
import math

import numpy as np
from django.test import SimpleTestCase

from dialect_asr.biasing import HotwordList, Posteriorgram
from dialect_asr.decoder import (
    ContextState,
    ContextTrie,
    Hypothesis,
    NgramScorer,
    _advance,
    _finalize,
    attention_rescore,
    build_context_trie,
    ctc_prefix_beam_search,
    decode_many,
)
from dialect_asr.exceptions import DecoderError, EmptyPhraseError, InvalidBiasWeightError
from dialect_asr.synth import plant_hotword, random_posteriorgram


def enumerate_paths(pg):
    """Best collapsed string and its total log-probability over all frame paths."""
    totals = {}
    for path in itertools.product(range(pg.vocab_size), repeat=pg.frames):
        score = sum(float(pg.log_probs[t, token]) for t, token in enumerate(path))
        collapsed = tuple(token for index, token in enumerate(path)
                          if token != pg.blank and (index == 0 or path[index - 1] != token))
        totals[collapsed] = np.logaddexp(totals.get(collapsed, -math.inf), score)
    return min(totals.items(), key=lambda item: (-item[1], item[0]))


class BeamSearchTests(SimpleTestCase):
    def test_full_beam_matches_path_enumeration(self):
        cases = 0
        for frames in range(1, 5):
            for vocab in range(2, 5):
                for seed in range(20):
                    pg = random_posteriorgram(frames, vocab, seed=(frames, vocab, seed))
                    tokens, score = enumerate_paths(pg)
                    best = ctc_prefix_beam_search(pg, vocab ** frames)[0]
                    self.assertEqual(best.tokens, tokens)
                    self.assertAlmostEqual(best.log_score, score, delta=1e-9)
                    cases += 1
        self.assertGreaterEqual(cases, 200)

    def test_narrow_beam_never_beats_full_beam(self):
        for seed in range(30):
            pg = random_posteriorgram(5, 4, seed=seed)
            full = ctc_prefix_beam_search(pg, 4 ** 5)[0]
            for beam in (1, 2, 3):
                self.assertLessEqual(ctc_prefix_beam_search(pg, beam)[0].log_score, full.log_score + 1e-9)

    def test_nbest_is_sorted_and_bounded(self):
        nbest = ctc_prefix_beam_search(random_posteriorgram(6, 5, seed=2), 4)
        self.assertLessEqual(len(nbest), 4)
        scores = [hypothesis.log_score for hypothesis in nbest]
        self.assertEqual(scores, sorted(scores, reverse=True))

    def test_bad_arguments(self):
        with self.assertRaises(DecoderError):
            ctc_prefix_beam_search(random_posteriorgram(2, 3, seed=0), 0)
        with self.assertRaises(DecoderError):
            ctc_prefix_beam_search(random_posteriorgram(2, 3, seed=0), 2, token_beam=0)

    def test_width_sweep_stays_below_the_exact_score(self):
        for seed in range(60):
            pg = random_posteriorgram(4, 4, seed=seed)
            _, exact = enumerate_paths(pg)
            scores = [ctc_prefix_beam_search(pg, beam)[0].log_score for beam in range(1, 4 ** 4 + 1)]
            for score in scores:
                self.assertLessEqual(score, exact + 1e-9)
            self.assertAlmostEqual(scores[-1], exact, delta=1e-9)

    def test_token_pruning_ignores_the_beam_width(self):
        pg = random_posteriorgram(5, 6, seed=3)
        top = {frame: set(np.argsort(-pg.log_probs[frame])[:2].tolist()) for frame in range(pg.frames)}
        for beam in (1, 4, 16):
            for hypothesis in ctc_prefix_beam_search(pg, beam, token_beam=2):
                self.assertTrue(all(any(token in top[frame] for frame in range(pg.frames))
                                    for token in hypothesis.tokens))
        wide = ctc_prefix_beam_search(pg, 16, token_beam=6)
        self.assertEqual(wide, ctc_prefix_beam_search(pg, 16))

    def test_decode_many_keeps_input_order(self):
        pgs = [random_posteriorgram(4, 5, seed=seed) for seed in range(8)]
        self.assertEqual(decode_many(pgs, 3, threads=4), decode_many(pgs, 3))
        with self.assertRaises(DecoderError):
            decode_many(pgs, 3, tries=[None])


class ContextTrieTests(SimpleTestCase):
    def test_shared_prefixes_share_nodes(self):
        trie = build_context_trie([[1, 2], [1, 3]], 0.5)
        self.assertEqual(trie.node_count, 4)
        self.assertEqual(len(trie.root.children), 1)
        self.assertTrue(trie.contains([1, 3]))
        self.assertFalse(trie.contains([1]))

    def test_hotword_list_input(self):
        trie = build_context_trie(HotwordList.from_token_lists([[4, 5]]), 0.5)
        self.assertTrue(trie.contains([4, 5]))

    def test_invalid_phrases_and_weights(self):
        with self.assertRaises(EmptyPhraseError):
            ContextTrie().add([])
        with self.assertRaises(InvalidBiasWeightError):
            ContextTrie(-0.5)

    def test_falling_off_a_partial_match_takes_back_its_bonus(self):
        trie = build_context_trie([[1, 2]], 0.5)
        state = _advance(trie, ContextState(trie.root), 1)
        self.assertEqual((state.partial, state.bonus), (0.5, 0.5))
        state = _advance(trie, state, 3)
        self.assertEqual((state.partial, state.bonus), (0.0, 0.0))
        self.assertIs(state.node, trie.root)

    def test_completed_phrase_keeps_its_bonus(self):
        trie = build_context_trie([[1, 2]], 0.5)
        state = ContextState(trie.root)
        for token in (1, 2, 3):
            state = _advance(trie, state, token)
        self.assertEqual(state.bonus, 1.0)
        self.assertIs(state.node, trie.root)

    def test_phrase_starting_inside_a_partial_match(self):
        trie = build_context_trie([[2, 3], [1, 2, 4]], 0.5)
        state = ContextState(trie.root)
        for token in (1, 2, 3):
            state = _advance(trie, state, token)
        self.assertEqual((state.partial, state.bonus), (0.0, 1.0))
        self.assertIs(state.node, trie.root)

    def test_overlapping_phrases_are_both_paid(self):
        trie = build_context_trie([[1, 2], [2, 3]], 0.5)
        state = ContextState(trie.root)
        for token in (1, 2, 3):
            state = _advance(trie, state, token)
        self.assertEqual(state.bonus, 2.0)

    def test_final_bonus_counts_every_completed_phrase(self):
        generator = np.random.default_rng(7)
        for _ in range(300):
            phrases = {tuple(generator.integers(1, 4, size=int(generator.integers(1, 4))).tolist())
                       for _ in range(int(generator.integers(1, 5)))}
            trie = build_context_trie(sorted(phrases), 0.5)
            tokens = generator.integers(1, 4, size=int(generator.integers(0, 12))).tolist()
            state = ContextState(trie.root)
            for token in tokens:
                state = _advance(trie, state, token)
                self.assertAlmostEqual(state.partial, 0.5 * state.node.depth)
                self.assertGreaterEqual(state.bonus, state.partial)
            expected = sum(
                0.5 * len(phrase)
                for phrase in phrases
                for start in range(len(tokens) - len(phrase) + 1)
                if tuple(tokens[start:start + len(phrase)]) == phrase
            )
            final = _finalize(trie, state)
            self.assertIs(final.node, trie.root)
            self.assertAlmostEqual(final.bonus, expected)


def planted(length, margin):
    hot = [3, 4, 5][:length]
    rival = [6, 7, 8][:length]
    context = [9, 10]
    return context + hot, context + rival, plant_hotword(hot, rival, 12, margin, context)


class BiasedDecodingTests(SimpleTestCase):
    def cases(self):
        generator = np.random.default_rng(0)
        for index in range(100):
            yield planted(1 + index % 3, float(generator.uniform(0.05, 0.45)))

    def test_bias_weight_recovers_every_planted_hotword(self):
        for hot, rival, pg in self.cases():
            trie = build_context_trie([hot[2:]], 0.5)
            self.assertEqual(list(ctc_prefix_beam_search(pg, 10, trie)[0].tokens), hot)
            self.assertEqual(list(ctc_prefix_beam_search(pg, 10)[0].tokens), rival)

    def test_zero_weight_recovers_none(self):
        for hot, rival, pg in self.cases():
            trie = build_context_trie([hot[2:]], 0.0)
            self.assertEqual(list(ctc_prefix_beam_search(pg, 10, trie)[0].tokens), rival)

    def test_empty_trie_changes_nothing(self):
        for seed in range(20):
            pg = random_posteriorgram(5, 6, seed=seed)
            self.assertEqual(ctc_prefix_beam_search(pg, 4, ContextTrie(0.5)), ctc_prefix_beam_search(pg, 4))
            self.assertEqual(ctc_prefix_beam_search(pg, 4, build_context_trie([], 0.5)),
                             ctc_prefix_beam_search(pg, 4))

    def test_unrelated_hotword_keeps_the_bias(self):
        pg = Posteriorgram.from_probs([
            [0.02, 0.90, 0.02, 0.02, 0.02, 0.02],
            [0.02, 0.02, 0.90, 0.02, 0.02, 0.02],
            [0.04, 0.02, 0.02, 0.43, 0.02, 0.47],
        ])
        self.assertEqual(ctc_prefix_beam_search(pg, 4)[0].tokens, (1, 2, 5))
        for phrases in ([[2, 3]], [[2, 3], [1, 2, 4]]):
            best = ctc_prefix_beam_search(pg, 4, build_context_trie(phrases, 0.5))[0]
            self.assertEqual(best.tokens, (1, 2, 3))
            self.assertEqual(best.accumulated_bonus, 1.0)

    def test_unfinished_phrase_bonus_is_removed_at_the_end(self):
        pg = Posteriorgram.from_probs([[0.05, 0.85, 0.05, 0.05], [0.05, 0.05, 0.05, 0.85]])
        trie = build_context_trie([[1, 2]], 0.5)
        best = ctc_prefix_beam_search(pg, 4, trie)[0]
        self.assertEqual(best.tokens, (1, 3))
        self.assertEqual(best.accumulated_bonus, 0.0)
        self.assertAlmostEqual(best.log_score, ctc_prefix_beam_search(pg, 4)[0].log_score)

    def test_reported_score_splits_into_acoustic_and_bonus(self):
        hot, _, pg = planted(2, 0.2)
        best = ctc_prefix_beam_search(pg, 10, build_context_trie([hot[2:]], 0.5))[0]
        self.assertEqual(best.accumulated_bonus, 1.0)
        self.assertAlmostEqual(best.acoustic_score, best.log_score - 1.0)


class RescoreTests(SimpleTestCase):
    def scorer(self, vocab=8, **options):
        return NgramScorer(np.log(np.full((vocab + 1, vocab), 1.0 / vocab)), **options)

    def test_prompt_match_promotes_a_hypothesis(self):
        nbest = [Hypothesis((1, 2), -1.0), Hypothesis((3, 4), -1.0)]
        ranked = attention_rescore(nbest, self.scorer(delimiters=(6, 7)), prompt=[6, 3, 4, 7])
        self.assertEqual(ranked[0].tokens, (3, 4))
        self.assertGreater(ranked[0].attention_score, ranked[1].attention_score)

    def test_ties_keep_nbest_order(self):
        nbest = [Hypothesis((1, 2), -1.0), Hypothesis((2, 1), -1.0)]
        self.assertEqual([h.tokens for h in attention_rescore(nbest, self.scorer())], [(1, 2), (2, 1)])

    def test_ctc_weight_one_keeps_decoder_order(self):
        nbest = [Hypothesis((1,), -1.0), Hypothesis((3, 4), -2.0)]
        ranked = attention_rescore(nbest, self.scorer(delimiters=(6, 7)), prompt=[6, 3, 4, 7], ctc_weight=1.0)
        self.assertEqual([h.tokens for h in ranked], [(1,), (3, 4)])
        self.assertEqual(ranked[1].combined_score, -2.0)

    def test_trained_bigrams_prefer_seen_sequences(self):
        scorer = NgramScorer.from_sequences([[1, 2, 3]] * 5, 5)
        self.assertGreater(scorer.score([], [1, 2, 3]), scorer.score([], [3, 2, 1]))

    def test_invalid_input(self):
        with self.assertRaises(DecoderError):
            attention_rescore([], self.scorer())
        with self.assertRaises(DecoderError):
            attention_rescore([Hypothesis((1,), 0.0)], self.scorer(), ctc_weight=1.5)
        with self.assertRaises(DecoderError):
            self.scorer().score([], [9])

    def test_hypothesis_dict_form(self):
        hypothesis = Hypothesis((1, 2), -0.5, 0.5)
        self.assertEqual(Hypothesis.from_dict(hypothesis.to_dict()), hypothesis)
        with self.assertRaises(DecoderError):
            Hypothesis.from_dict({"tokens": [1]})
