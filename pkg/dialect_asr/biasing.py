"""Hotword biasing: phrase filtering over posteriorgrams, prompt construction,
and the forward pass of the attention-based context fusion layer."""
import logging
import math
import struct
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    BiasingError,
    HotwordListError,
    PosteriorgramFormatError,
    PromptTokensMissingError,
    ShapeMismatchError,
    TokenRangeError,
)
from .tokenizer import PROMPT_END, PROMPT_START, TokenKind, TokenizerModel, TokenSequence, decode, encode

logger = logging.getLogger(__name__)

POSTERIORGRAM_MAGIC = b"DOLPPOST"
POSTERIORGRAM_VERSION = 1
ROW_TOLERANCE = 1e-6

_PG_HEADER = struct.Struct(">8sHII")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class Posteriorgram:
    """T x V matrix of natural-log posteriors, one row per frame."""

    def __init__(self, log_probs, blank: int = 0):
        log_probs = np.array(log_probs, dtype=np.float64)
        if log_probs.ndim != 2 or log_probs.shape[0] < 1 or log_probs.shape[1] < 1:
            raise PosteriorgramFormatError(f"posteriorgram must be a non-empty T x V matrix, got shape {log_probs.shape}")
        if np.isnan(log_probs).any() or (log_probs == np.inf).any():
            raise PosteriorgramFormatError("posteriorgram holds NaN or +inf entries")
        sums = np.exp(log_probs).sum(axis=1)
        worst = float(np.abs(sums - 1.0).max())
        if worst > ROW_TOLERANCE:
            raise PosteriorgramFormatError(f"rows must exponentiate to a distribution (off by {worst:.3g})")
        if not 0 <= blank < log_probs.shape[1]:
            raise PosteriorgramFormatError(f"blank index {blank} outside [0, {log_probs.shape[1]})")
        log_probs.setflags(write=False)
        self.log_probs = log_probs
        self.blank = blank

    @property
    def frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.log_probs.shape[1]

    @classmethod
    def from_logits(cls, logits, blank: int = 0) -> "Posteriorgram":
        return cls(log_softmax(np.asarray(logits, dtype=np.float64)), blank)

    @classmethod
    def from_probs(cls, probs, blank: int = 0) -> "Posteriorgram":
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(probs, dtype=np.float64)), blank)

    def to_bytes(self) -> bytes:
        frames, vocab = self.log_probs.shape
        header = _PG_HEADER.pack(POSTERIORGRAM_MAGIC, POSTERIORGRAM_VERSION, frames, vocab)
        return header + self.log_probs.astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes, blank: int = 0) -> "Posteriorgram":
        if len(data) < _PG_HEADER.size:
            raise PosteriorgramFormatError("posteriorgram header is truncated")
        magic, version, frames, vocab = _PG_HEADER.unpack_from(data)
        if magic != POSTERIORGRAM_MAGIC:
            raise PosteriorgramFormatError(f"bad posteriorgram magic {magic!r}")
        if version != POSTERIORGRAM_VERSION:
            raise PosteriorgramFormatError(f"unsupported posteriorgram version {version}")
        expected = _PG_HEADER.size + frames * vocab * 4
        if len(data) != expected:
            raise PosteriorgramFormatError(f"expected {expected} bytes for a {frames}x{vocab} posteriorgram, found {len(data)}")
        values = np.frombuffer(data, dtype="<f4", offset=_PG_HEADER.size).reshape(frames, vocab)
        # float32 storage loses ~1e-7 per entry; renormalize rows in float64
        return cls(log_softmax(values.astype(np.float64)), blank)

    def save(self, path: str) -> None:
        try:
            with open(path, "wb") as handle:
                handle.write(self.to_bytes())
        except OSError as exc:
            raise PosteriorgramFormatError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str, blank: int = 0) -> "Posteriorgram":
        try:
            with open(path, "rb") as handle:
                data = handle.read()
        except OSError as exc:
            raise PosteriorgramFormatError(f"cannot read {path}: {exc}") from exc
        return cls.from_bytes(data, blank)


@dataclass(frozen=True)
class Hotword:
    text: str
    tokens: TokenSequence


@dataclass(frozen=True)
class HotwordList:
    phrases: Tuple[Hotword, ...] = ()

    def __post_init__(self):
        seen = set()
        for phrase in self.phrases:
            if len(phrase.tokens) == 0:
                raise HotwordListError(f"hotword {phrase.text!r} encodes to no tokens")
            if phrase.text in seen:
                raise HotwordListError(f"duplicate hotword {phrase.text!r}")
            seen.add(phrase.text)

    def __len__(self) -> int:
        return len(self.phrases)

    def __iter__(self) -> Iterator[Hotword]:
        return iter(self.phrases)

    def __bool__(self) -> bool:
        return bool(self.phrases)

    @property
    def texts(self) -> List[str]:
        return [phrase.text for phrase in self.phrases]

    @classmethod
    def from_texts(cls, texts: Iterable[str], model: TokenizerModel) -> "HotwordList":
        phrases = []
        for text in texts:
            text = unicodedata.normalize("NFC", text.strip())
            if text:
                phrases.append(Hotword(text, encode(text, model)))
        return cls(tuple(phrases))

    @classmethod
    def from_token_lists(cls, token_lists: Iterable[Sequence[int]]) -> "HotwordList":
        """Hotwords given directly as id sequences; the text is the ids joined by spaces."""
        phrases = []
        for ids in token_lists:
            ids = tuple(int(token_id) for token_id in ids)
            phrases.append(Hotword(" ".join(map(str, ids)), TokenSequence(ids, (TokenKind.BPE,) * len(ids))))
        return cls(tuple(phrases))


@dataclass(frozen=True)
class FilterConfig:
    psc_threshold: float = -4.0
    soc_threshold: float = -4.0
    length_normalize: bool = True

    def __post_init__(self):
        for name in ("psc_threshold", "soc_threshold"):
            value = getattr(self, name)
            if math.isnan(value) or value == math.inf:
                raise BiasingError(f"{name} must be a real log-score or -inf, got {value}")


@dataclass(frozen=True)
class PhraseScore:
    text: str
    psc: float
    soc: Optional[float]
    kept_by_psc: bool
    kept_by_soc: bool

    @property
    def kept(self) -> bool:
        return self.kept_by_psc and self.kept_by_soc


def _phrase_ids(pg: Posteriorgram, phrase: Union[TokenSequence, Sequence[int]]) -> np.ndarray:
    ids = np.asarray(list(phrase), dtype=np.int64)
    if ids.size == 0:
        raise HotwordListError("phrase must hold at least one token")
    bad = ids[(ids < 0) | (ids >= pg.vocab_size)]
    if bad.size:
        raise TokenRangeError(f"token id {int(bad[0])} outside the posteriorgram vocabulary [0, {pg.vocab_size})")
    return ids


def phrase_score_confidence(pg: Posteriorgram, phrase, length_normalize: bool = True) -> float:
    """Mean over the phrase's tokens of each token's best log-posterior in any frame.

    Token order is ignored; this is the cheap first-stage screen.
    """
    ids = _phrase_ids(pg, phrase)
    best = pg.log_probs[:, ids].max(axis=0)
    total = float(best.sum())
    return total / len(ids) if length_normalize else total


def sequence_order_confidence(pg: Posteriorgram, phrase, length_normalize: bool = True) -> float:
    """Best monotone alignment score: tokens on strictly increasing frames.

    Returns -inf when the phrase has more tokens than the posteriorgram has
    frames.
    """
    ids = _phrase_ids(pg, phrase)
    if pg.frames < len(ids):
        return -math.inf
    columns = pg.log_probs[:, ids]
    best = columns[:, 0].copy()
    for k in range(1, len(ids)):
        reachable = np.empty_like(best)
        reachable[0] = -np.inf
        reachable[1:] = np.maximum.accumulate(best)[:-1]
        best = reachable + columns[:, k]
    total = float(best.max())
    return total / len(ids) if length_normalize else total


def filter_scores(pg: Posteriorgram, hotwords: HotwordList, config: FilterConfig) -> List[PhraseScore]:
    scores = []
    for phrase in hotwords:
        psc = phrase_score_confidence(pg, phrase.tokens, config.length_normalize)
        kept_by_psc = psc >= config.psc_threshold
        soc = sequence_order_confidence(pg, phrase.tokens, config.length_normalize)
        scores.append(PhraseScore(phrase.text, psc, soc, kept_by_psc, kept_by_psc and soc >= config.soc_threshold))
    return scores


def two_stage_filter(pg: Posteriorgram, hotwords: HotwordList, config: FilterConfig) -> HotwordList:
    """Keep phrases passing the PSC screen, then the SOC check; order preserved."""
    stage_one = [
        phrase for phrase in hotwords
        if phrase_score_confidence(pg, phrase.tokens, config.length_normalize) >= config.psc_threshold
    ]
    stage_two = [
        phrase for phrase in stage_one
        if sequence_order_confidence(pg, phrase.tokens, config.length_normalize) >= config.soc_threshold
    ]
    logger.debug("hotword filter kept %d -> %d -> %d", len(hotwords), len(stage_one), len(stage_two))
    return HotwordList(tuple(stage_two))


def select_prompt_hotwords(pg: Posteriorgram, hotwords: HotwordList, threshold: float = -2.0,
                           length_normalize: bool = True) -> HotwordList:
    """Prompt-time selection: both filter stages at the single prompt threshold."""
    return two_stage_filter(pg, hotwords, FilterConfig(threshold, threshold, length_normalize))


def _special_sequence(model: TokenizerModel, name: str) -> TokenSequence:
    if not model.has_token(name):
        raise PromptTokensMissingError(f"tokenizer has no {name} token")
    return TokenSequence((model.token_id(name),), (TokenKind.SPECIAL,))


def wrap_prompt(phrases: Iterable[Hotword], model: TokenizerModel, separator: Optional[str] = None) -> TokenSequence:
    """Concatenate phrase tokens between the prompt delimiters, in the given order."""
    start = _special_sequence(model, PROMPT_START)
    end = _special_sequence(model, PROMPT_END)
    gap = _special_sequence(model, separator) if separator else None
    prompt = start
    for position, phrase in enumerate(phrases):
        if gap is not None and position:
            prompt = prompt + gap
        prompt = prompt + phrase.tokens
    return prompt + end


def build_prompt(
    transcript: Union[str, TokenSequence, Sequence[int]],
    global_list: HotwordList,
    n_distractors: int,
    seed,
    model: TokenizerModel,
    separator: Optional[str] = None,
) -> TokenSequence:
    """Prompt prefix: present hotwords plus sampled distractors, shuffled,
    between the prompt delimiters.

    A hotword is present when its text occurs in the transcript. Distractors
    are drawn without replacement from the hotwords that are not present.
    """
    for name in (PROMPT_START, PROMPT_END):
        _special_sequence(model, name)
    if n_distractors < 0:
        raise BiasingError("n_distractors must be >= 0")

    text = transcript if isinstance(transcript, str) else decode(transcript, model)
    text = unicodedata.normalize("NFC", text)
    present = [phrase for phrase in global_list if phrase.text in text]
    absent = [phrase for phrase in global_list if phrase.text not in text]

    generator = np.random.default_rng(seed)
    count = min(n_distractors, len(absent))
    picks = generator.choice(len(absent), size=count, replace=False).tolist() if count else []
    chosen = present + [absent[index] for index in picks]
    order = generator.permutation(len(chosen)).tolist()
    logger.debug("prompt holds %d present and %d distractor hotwords", len(present), count)
    return wrap_prompt([chosen[index] for index in order], model, separator)


def prompt_body(prompt: TokenSequence, model: TokenizerModel) -> Tuple[int, ...]:
    """Token ids strictly between the prompt delimiters."""
    ids = list(prompt)
    start, end = model.token_id(PROMPT_START), model.token_id(PROMPT_END)
    if not ids:
        return ()
    if ids[0] != start or ids[-1] != end:
        raise PromptTokensMissingError("prompt must start and end with the prompt delimiters")
    return tuple(ids[1:-1])


@dataclass
class ContextFusionParams:
    """Weights of the hotword attention layer.

    Shapes: embed_table (vocab, d_c); w_q (d, d); w_k and w_v (d_c, d);
    w_o (d, d); no_bias (d_c,).
    """

    embed_table: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    no_bias: np.ndarray
    n_heads: int = 4

    def __post_init__(self):
        for name in ("embed_table", "w_q", "w_k", "w_v", "w_o", "no_bias"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.n_heads = int(self.n_heads)
        if self.embed_table.ndim != 2:
            raise ShapeMismatchError("embed_table must be a (vocab, d_c) matrix")
        d_c = self.embed_table.shape[1]
        d = self.w_q.shape[0] if self.w_q.ndim == 2 else -1
        expected = {
            "w_q": (d, d),
            "w_k": (d_c, d),
            "w_v": (d_c, d),
            "w_o": (d, d),
            "no_bias": (d_c,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatchError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.n_heads < 1 or d % self.n_heads:
            raise ShapeMismatchError(f"model width {d} is not divisible by {self.n_heads} heads")

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    @property
    def context_width(self) -> int:
        return self.embed_table.shape[1]

    @classmethod
    def random_init(cls, vocab_size: int, d: int, d_c: int, n_heads: int = 4, seed: int = 0) -> "ContextFusionParams":
        generator = np.random.default_rng(seed)
        return cls(
            embed_table=generator.normal(0.0, 1.0, (vocab_size, d_c)),
            w_q=generator.normal(0.0, d ** -0.5, (d, d)),
            w_k=generator.normal(0.0, d_c ** -0.5, (d_c, d)),
            w_v=generator.normal(0.0, d_c ** -0.5, (d_c, d)),
            w_o=generator.normal(0.0, d ** -0.5, (d, d)),
            no_bias=generator.normal(0.0, 1.0, d_c),
            n_heads=n_heads,
        )

    def save(self, path: str) -> None:
        try:
            with open(path, "wb") as handle:
                np.savez(handle, embed_table=self.embed_table, w_q=self.w_q, w_k=self.w_k, w_v=self.w_v,
                         w_o=self.w_o, no_bias=self.no_bias, n_heads=np.asarray(self.n_heads))
        except OSError as exc:
            raise BiasingError(f"cannot write fusion parameters {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "ContextFusionParams":
        try:
            with np.load(path) as archive:
                return cls(**{name: archive[name] for name in (
                    "embed_table", "w_q", "w_k", "w_v", "w_o", "no_bias", "n_heads")})
        except (OSError, KeyError, ValueError) as exc:
            raise BiasingError(f"cannot load fusion parameters from {path}: {exc}") from exc


@dataclass
class FusionResult:
    output: np.ndarray
    attention: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))


def context_embeddings(hotwords: HotwordList, params: ContextFusionParams) -> np.ndarray:
    """Context matrix: the no-bias vector followed by one mean-pooled row per phrase."""
    rows = [params.no_bias]
    vocab = params.embed_table.shape[0]
    for phrase in hotwords:
        ids = np.asarray(list(phrase.tokens), dtype=np.int64)
        if ((ids < 0) | (ids >= vocab)).any():
            raise TokenRangeError(f"hotword {phrase.text!r} has ids outside the embedding table [0, {vocab})")
        rows.append(params.embed_table[ids].mean(axis=0))
    return np.vstack(rows)


def context_fuse(hidden, hotwords: HotwordList, params: ContextFusionParams,
                 return_attention: bool = False) -> Union[np.ndarray, FusionResult]:
    """hidden + MultiHeadAttention(hidden, context) projected by w_o.

    ``attention`` in the result has shape (heads, T, 1 + phrases); an empty
    hotword list returns ``hidden`` unchanged.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2 or hidden.shape[1] != params.width:
        raise ShapeMismatchError(f"hidden must be (T, {params.width}), got {hidden.shape}")
    if not hotwords:
        output = hidden.copy()
        return FusionResult(output) if return_attention else output

    context = context_embeddings(hotwords, params)
    frames, width = hidden.shape
    heads = params.n_heads
    head_width = width // heads

    queries = (hidden @ params.w_q).reshape(frames, heads, head_width).transpose(1, 0, 2)
    keys = (context @ params.w_k).reshape(len(context), heads, head_width).transpose(1, 0, 2)
    values = (context @ params.w_v).reshape(len(context), heads, head_width).transpose(1, 0, 2)

    logits = queries @ keys.transpose(0, 2, 1) / math.sqrt(head_width)
    logits -= logits.max(axis=-1, keepdims=True)
    attention = np.exp(logits)
    attention /= attention.sum(axis=-1, keepdims=True)

    mixed = (attention @ values).transpose(1, 0, 2).reshape(frames, width)
    output = hidden + mixed @ params.w_o
    return FusionResult(output, attention) if return_attention else output
