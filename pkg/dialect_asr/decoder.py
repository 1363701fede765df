"""CTC prefix beam search with hotword shallow fusion, and n-best rescoring."""
import dataclasses
import logging
import math
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .biasing import HotwordList, Posteriorgram
from .exceptions import DecoderError, EmptyPhraseError, EmptyPosteriorgramError, InvalidBiasWeightError

logger = logging.getLogger(__name__)

NEG_INF = -math.inf


class TrieNode:
    __slots__ = ("children", "is_end", "depth", "fail", "matched")

    def __init__(self, depth: int = 0):
        self.children: Dict[int, "TrieNode"] = {}
        self.is_end = False
        self.depth = depth
        self.fail: Optional["TrieNode"] = None
        # token length of every phrase ending here, this node's own and its suffixes'
        self.matched = 0


class ContextTrie:
    """Prefix tree over hotword token ids; every edge is worth ``bonus``.

    Fail links make it an Aho-Corasick automaton, so a phrase that starts
    inside another phrase's partial match is still found.
    """

    def __init__(self, bonus: float = 0.5):
        if math.isnan(bonus) or bonus < 0:
            raise InvalidBiasWeightError(f"bias weight must be >= 0, got {bonus}")
        self.bonus = float(bonus)
        self.root = TrieNode()
        self.root.fail = self.root
        self.node_count = 1
        self.phrase_count = 0
        self._linked = True

    def __len__(self) -> int:
        return self.phrase_count

    def __bool__(self) -> bool:
        return self.phrase_count > 0

    def add(self, ids: Sequence[int]) -> None:
        ids = list(ids)
        if not ids:
            raise EmptyPhraseError("cannot add an empty phrase to the context trie")
        node = self.root
        for token_id in ids:
            child = node.children.get(token_id)
            if child is None:
                child = node.children[token_id] = TrieNode(node.depth + 1)
                self.node_count += 1
            node = child
        if not node.is_end:
            node.is_end = True
            self.phrase_count += 1
        self._linked = False

    def link(self) -> None:
        """Fill fail links and matched lengths, breadth first."""
        if self._linked:
            return
        root = self.root
        queue = deque()
        for child in root.children.values():
            child.fail = root
            child.matched = child.depth if child.is_end else 0
            queue.append(child)
        while queue:
            node = queue.popleft()
            for token_id, child in node.children.items():
                fail = node.fail
                while token_id not in fail.children and fail is not root:
                    fail = fail.fail
                child.fail = fail.children.get(token_id, root)
                child.matched = (child.depth if child.is_end else 0) + child.fail.matched
                queue.append(child)
        self._linked = True

    def contains(self, ids: Sequence[int]) -> bool:
        node = self.root
        for token_id in ids:
            node = node.children.get(token_id)
            if node is None:
                return False
        return node.is_end


def build_context_trie(hotwords: Union[HotwordList, Iterable[Sequence[int]]], bonus: float) -> ContextTrie:
    trie = ContextTrie(bonus)
    for phrase in hotwords:
        trie.add(list(phrase.tokens) if hasattr(phrase, "tokens") else list(phrase))
    trie.link()
    logger.debug("context trie: %d phrases, %d nodes", trie.phrase_count, trie.node_count)
    return trie


@dataclass(frozen=True)
class ContextState:
    """Trie cursor plus bonus. ``partial`` is the part of ``bonus`` still at stake."""

    node: Optional[TrieNode]
    partial: float = 0.0
    bonus: float = 0.0


def _advance(trie: ContextTrie, state: ContextState, token_id: int) -> ContextState:
    """Move the trie cursor over ``token_id``.

    The cursor sits on the longest suffix of the tokens read so far that a
    phrase can still extend, and ``partial`` is one bonus per token of it.
    Falling off a match takes back the old partial and credits the prefix
    reached through the fail links. Every phrase completed on the way, the
    ones ending inside a longer match included, is paid in full and kept.
    """
    root = trie.root
    node = state.node
    child = node.children.get(token_id)
    while child is None and node is not root:
        node = node.fail
        child = node.children.get(token_id)
    if child is None:
        child = root
    kept = state.bonus - state.partial + trie.bonus * child.matched
    while not child.children and child is not root:
        child = child.fail
    partial = trie.bonus * child.depth
    return ContextState(child, partial, kept + partial)


def _finalize(trie: Optional[ContextTrie], state: ContextState) -> ContextState:
    if trie is None:
        return state
    return ContextState(trie.root, 0.0, state.bonus - state.partial)


@dataclass(frozen=True)
class Hypothesis:
    """One decoding result.

    ``log_score`` is the acoustic log-probability plus ``accumulated_bonus``.
    ``tokens`` are vocabulary ids after CTC collapsing.
    """

    tokens: Tuple[int, ...]
    log_score: float
    accumulated_bonus: float = 0.0
    trie_state: Optional[TrieNode] = dataclasses.field(default=None, compare=False, repr=False)
    attention_score: Optional[float] = None
    combined_score: Optional[float] = None

    @property
    def acoustic_score(self) -> float:
        return self.log_score - self.accumulated_bonus

    def to_dict(self) -> dict:
        payload = {"tokens": list(self.tokens), "log_score": self.log_score, "bonus": self.accumulated_bonus}
        if self.combined_score is not None:
            payload["attention_score"] = self.attention_score
            payload["combined_score"] = self.combined_score
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "Hypothesis":
        try:
            return cls(
                tokens=tuple(int(token_id) for token_id in payload["tokens"]),
                log_score=float(payload["log_score"]),
                accumulated_bonus=float(payload.get("bonus", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DecoderError(f"malformed hypothesis {payload!r}: {exc}") from exc


def _logaddexp(*values: float) -> float:
    top = max(values)
    if top == NEG_INF:
        return NEG_INF
    return top + math.log(sum(math.exp(value - top) for value in values))


def ctc_prefix_beam_search(pg: Posteriorgram, beam: int, trie: Optional[ContextTrie] = None,
                           token_beam: Optional[int] = None) -> List[Hypothesis]:
    """CTC prefix beam search, optionally biased toward the trie's phrases.

    Each prefix keeps the log-probability of paths ending in blank and in
    non-blank. Prefixes are ranked by acoustic score plus context bonus, ties
    broken by token ids. Each frame expands its ``token_beam`` most likely
    tokens, or all of them when ``token_beam`` is None, whatever ``beam`` is.
    """
    if pg is None or pg.frames == 0:
        raise EmptyPosteriorgramError("posteriorgram has no frames")
    if beam < 1:
        raise DecoderError("beam must be >= 1")
    if token_beam is not None and token_beam < 1:
        raise DecoderError("token_beam must be >= 1")
    if trie is not None and not trie:
        trie = None
    if trie is not None:
        trie.link()

    log_probs = pg.log_probs
    blank = pg.blank
    vocab = pg.vocab_size
    start = ContextState(trie.root if trie else None)

    beams: Dict[Tuple[int, ...], Tuple[float, float]] = {(): (0.0, NEG_INF)}
    contexts: Dict[Tuple[int, ...], ContextState] = {(): start}

    for frame in range(pg.frames):
        row = log_probs[frame]
        if token_beam is None or token_beam >= vocab:
            candidates = range(vocab)
        else:
            candidates = np.argsort(-row, kind="stable")[:token_beam].tolist()

        expanded: Dict[Tuple[int, ...], List[float]] = defaultdict(lambda: [NEG_INF, NEG_INF])
        reached: Dict[Tuple[int, ...], ContextState] = {}
        for prefix, (p_blank, p_nonblank) in beams.items():
            last = prefix[-1] if prefix else None
            for token_id in candidates:
                p = float(row[token_id])
                if p == NEG_INF:
                    continue
                if token_id == blank:
                    entry = expanded[prefix]
                    entry[0] = _logaddexp(entry[0], p_blank + p, p_nonblank + p)
                    reached[prefix] = contexts[prefix]
                    continue
                extended = prefix + (token_id,)
                if extended not in reached:
                    reached[extended] = _advance(trie, contexts[prefix], token_id) if trie else start
                entry = expanded[extended]
                if token_id == last:
                    entry[1] = _logaddexp(entry[1], p_blank + p)
                    same = expanded[prefix]
                    same[1] = _logaddexp(same[1], p_nonblank + p)
                    reached[prefix] = contexts[prefix]
                else:
                    entry[1] = _logaddexp(entry[1], p_blank + p, p_nonblank + p)

        final = frame == pg.frames - 1
        ranked = []
        for prefix, (p_blank, p_nonblank) in expanded.items():
            acoustic = _logaddexp(p_blank, p_nonblank)
            if acoustic == NEG_INF:
                continue
            state = reached[prefix]
            if final:
                state = _finalize(trie, state)
            ranked.append((-(acoustic + state.bonus), prefix, state, p_blank, p_nonblank))
        ranked.sort(key=lambda item: (item[0], item[1]))
        ranked = ranked[:beam]
        beams = {prefix: (p_blank, p_nonblank) for _, prefix, _, p_blank, p_nonblank in ranked}
        contexts = {prefix: reached[prefix] for prefix in beams}

    hypotheses = [
        Hypothesis(prefix, -negated, state.bonus, state.node)
        for negated, prefix, state, _, _ in ranked
    ]
    logger.debug("decoded %d frames, 1-best %s", pg.frames, hypotheses[0].tokens if hypotheses else None)
    return hypotheses


def decode_many(pgs: Sequence[Posteriorgram], beam: int, tries: Optional[Sequence[Optional[ContextTrie]]] = None,
                threads: int = 1, token_beam: Optional[int] = None) -> List[List[Hypothesis]]:
    """Decode several posteriorgrams, each with its own trie (or none).

    Results come back in input order whatever the thread count.
    """
    tries = list(tries) if tries is not None else [None] * len(pgs)
    if len(tries) != len(pgs):
        raise DecoderError("need one trie (or None) per posteriorgram")
    for trie in tries:
        if trie is not None:
            trie.link()
    if threads <= 1:
        return [ctc_prefix_beam_search(pg, beam, trie, token_beam) for pg, trie in zip(pgs, tries)]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(lambda job: ctc_prefix_beam_search(job[0], beam, job[1], token_beam),
                                 zip(pgs, tries)))


class SequenceScorer(Protocol):
    def score(self, prefix: Sequence[int], candidate: Sequence[int]) -> float:
        """Deterministic log-score of ``candidate`` given the decoder prefix."""


class NgramScorer:
    """Add-k bigram model over token ids with a prompt-match bonus.

    Candidates that contain a run of ``min_match`` consecutive tokens also
    found in the prompt body gain ``prompt_bonus``. Ids in ``delimiters``
    (prompt start/end, separator) are stripped from the prefix first.
    """

    def __init__(self, log_table: np.ndarray, prompt_bonus: float = 2.0, min_match: int = 2,
                 delimiters: Iterable[int] = ()):
        log_table = np.asarray(log_table, dtype=np.float64)
        if log_table.ndim != 2 or log_table.shape[0] != log_table.shape[1] + 1:
            raise DecoderError("bigram table must have shape (V + 1, V); the last row is the start context")
        if min_match < 1:
            raise DecoderError("min_match must be >= 1")
        self.log_table = log_table
        self.prompt_bonus = prompt_bonus
        self.min_match = min_match
        self.delimiters = frozenset(delimiters)

    @property
    def vocab_size(self) -> int:
        return self.log_table.shape[1]

    @classmethod
    def random(cls, vocab_size: int, seed: int = 0, smoothing: float = 1.0, **kwargs) -> "NgramScorer":
        generator = np.random.default_rng(seed)
        counts = generator.integers(0, 5, size=(vocab_size + 1, vocab_size)) + smoothing
        return cls(np.log(counts / counts.sum(axis=1, keepdims=True)), **kwargs)

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence[int]], vocab_size: int, smoothing: float = 1.0,
                       **kwargs) -> "NgramScorer":
        counts = np.full((vocab_size + 1, vocab_size), float(smoothing))
        for sequence in sequences:
            previous = vocab_size
            for token_id in sequence:
                counts[previous, token_id] += 1
                previous = token_id
        return cls(np.log(counts / counts.sum(axis=1, keepdims=True)), **kwargs)

    def _prompt_runs(self, prefix: Sequence[int]) -> set:
        body = [token_id for token_id in prefix if token_id not in self.delimiters]
        n = self.min_match
        return {tuple(body[i:i + n]) for i in range(len(body) - n + 1)}

    def score(self, prefix: Sequence[int], candidate: Sequence[int]) -> float:
        total = 0.0
        previous = self.vocab_size
        for token_id in candidate:
            if not 0 <= token_id < self.vocab_size:
                raise DecoderError(f"token id {token_id} outside the scorer vocabulary")
            total += float(self.log_table[previous, token_id])
            previous = token_id
        runs = self._prompt_runs(prefix) if prefix else set()
        if runs:
            candidate = list(candidate)
            n = self.min_match
            if any(tuple(candidate[i:i + n]) in runs for i in range(len(candidate) - n + 1)):
                total += self.prompt_bonus
        return total


def attention_rescore(nbest: Sequence[Hypothesis], scorer: SequenceScorer,
                      prompt: Sequence[int] = (), ctc_weight: float = 0.5) -> List[Hypothesis]:
    """Re-rank by ctc_weight * log_score + (1 - ctc_weight) * scorer score.

    The sort is stable, so equal combined scores keep their n-best order.
    """
    if not nbest:
        raise DecoderError("cannot rescore an empty n-best list")
    if not 0.0 <= ctc_weight <= 1.0:
        raise DecoderError(f"ctc_weight must lie in [0, 1], got {ctc_weight}")
    prompt = list(prompt)
    rescored = []
    for hypothesis in nbest:
        attention = scorer.score(prompt, hypothesis.tokens)
        combined = ctc_weight * hypothesis.log_score
        if ctc_weight < 1.0:
            combined += (1.0 - ctc_weight) * attention
        rescored.append(dataclasses.replace(hypothesis, attention_score=attention, combined_score=combined))
    return sorted(rescored, key=lambda hypothesis: -hypothesis.combined_score)
