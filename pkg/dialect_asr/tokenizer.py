"""Hybrid tokenizer.

CJK ideographs are modelled one character per token; every other script is
split into words on whitespace/punctuation and encoded with BPE merges learned
from the corpus. A registry of ``<...>`` special tokens (task, eos, timestamp,
dialect, prompt delimiters, unk, blank) sits at the front of the vocabulary,
followed by a pool of reserved ids that new dialects can claim later without
moving any existing id.
"""
import json
import logging
import re
import threading
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from tokenizers.models import BPE

from .exceptions import (
    BudgetExhaustedError,
    DuplicateNameError,
    InvalidTokenNameError,
    ModelFormatError,
    PoolExhaustedError,
    TokenIdOutOfRangeError,
    TokenizerError,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

BLANK = "<blank>"
UNK = "<unk>"
PROMPT_START = "<PROMPT_START>"
PROMPT_END = "<PROMPT_END>"
RESERVED_TEMPLATE = "<RESERVED_{}>"

# CJK Unified Ideographs and Extension A.
DEFAULT_CJK_RANGES: Tuple[Tuple[int, int], ...] = ((0x4E00, 0x9FFF), (0x3400, 0x4DBF))

DEFAULT_SPECIALS: Dict[str, Tuple[str, ...]] = {
    "blank": (BLANK,),
    "unk": (UNK,),
    "task": ("<asr>",),
    "eos": ("<eos>",),
    "timestamp": (),
    "dialect": (),
    "prompt": (PROMPT_START, PROMPT_END),
}

SPECIAL_PATTERN = re.compile(r"<[^<>\s]+>")
DIALECT_PATTERN = re.compile(r"<[A-Z][A-Z0-9_]*>")
RESERVED_PATTERN = re.compile(r"<RESERVED_\d+>")
WORD_PATTERN = re.compile(r"\w+|\s|.", re.DOTALL)


class TokenKind(str, Enum):
    CJK_CHAR = "cjk-char"
    BPE = "bpe"
    SPECIAL = "special"
    UNK = "unk"


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...] = ()
    kinds: Tuple[TokenKind, ...] = ()

    def __post_init__(self):
        if len(self.ids) != len(self.kinds):
            raise ValueError("ids and kinds must have the same length")

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self.ids)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        return TokenSequence(self.ids + other.ids, self.kinds + other.kinds)

    def to_list(self) -> List[int]:
        return list(self.ids)


@dataclass(frozen=True)
class TokenizerConfig:
    target_vocab_size: int = 18173
    reserved_dialect_count: int = 80
    specials: Mapping[str, Sequence[str]] = field(default_factory=lambda: dict(DEFAULT_SPECIALS))
    cjk_ranges: Tuple[Tuple[int, int], ...] = DEFAULT_CJK_RANGES
    min_pair_frequency: int = 1


@dataclass
class TokenizerModel:
    """Vocabulary, merges and special-token registry.

    Ids are laid out as: specials (registry order), reserved dialect pool,
    base characters, CJK singletons, merged subwords. The model is immutable
    except for ``register_dialect``, which takes the model's lock.
    """

    id_to_token: List[str]
    merges: List[Tuple[str, str]]
    specials: Dict[str, List[str]]
    reserved_size: int
    reserved_used: List[str] = field(default_factory=list)
    cjk_ranges: Tuple[Tuple[int, int], ...] = DEFAULT_CJK_RANGES
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.vocab: Dict[str, int] = {}
        for index, token in enumerate(self.id_to_token):
            if token in self.vocab:
                raise ModelFormatError(f"duplicate vocabulary entry {token!r}")
            self.vocab[token] = index
        try:
            self._bpe = BPE(dict(self.vocab), [tuple(pair) for pair in self.merges], unk_token=self.specials["unk"][0])
        except Exception as exc:
            raise ModelFormatError(f"merges do not fit the vocabulary: {exc}") from exc
        self._special_ids = set(range(self.reserved_offset + self.reserved_size))
        self._refresh_special_pattern()

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def reserved_offset(self) -> int:
        return sum(len(names) for names in self.specials.values())

    @property
    def free_slots(self) -> int:
        return self.reserved_size - len(self.reserved_used)

    @property
    def blank_id(self) -> int:
        return self.vocab[self.specials["blank"][0]]

    @property
    def unk_id(self) -> int:
        return self.vocab[self.specials["unk"][0]]

    def token_id(self, token: str) -> int:
        try:
            return self.vocab[token]
        except KeyError:
            raise TokenizerError(f"token {token!r} is not in the vocabulary") from None

    def has_token(self, token: str) -> bool:
        return token in self.vocab

    def is_special_id(self, token_id: int) -> bool:
        return token_id in self._special_ids

    def is_cjk(self, char: str) -> bool:
        point = ord(char)
        return any(low <= point <= high for low, high in self.cjk_ranges)

    def matchable_specials(self) -> List[str]:
        """Registered specials that encode() recognises in text (never blank)."""
        names = [name for category, group in self.specials.items() if category != "blank" for name in group]
        return names + list(self.reserved_used)

    def _refresh_special_pattern(self) -> None:
        names = sorted(self.matchable_specials(), key=lambda name: (-len(name), name))
        self._special_pattern = re.compile("|".join(re.escape(name) for name in names)) if names else None

    def split_specials(self, text: str) -> Iterator[Tuple[str, bool]]:
        """Yield (piece, is_special) spans, longest special match first."""
        if self._special_pattern is None:
            if text:
                yield text, False
            return
        position = 0
        for match in self._special_pattern.finditer(text):
            if match.start() > position:
                yield text[position:match.start()], False
            yield match.group(0), True
            position = match.end()
        if position < len(text):
            yield text[position:], False

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "vocab": list(self.id_to_token),
            "merges": [list(pair) for pair in self.merges],
            "specials": {category: list(names) for category, names in self.specials.items()},
            "reserved": {"size": self.reserved_size, "used": list(self.reserved_used)},
            "cjk_ranges": [list(pair) for pair in self.cjk_ranges],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TokenizerModel":
        try:
            version = payload["version"]
            vocab = list(payload["vocab"])
            merges = [tuple(pair) for pair in payload["merges"]]
            specials = {category: list(names) for category, names in payload["specials"].items()}
            reserved = payload["reserved"]
            size, used = int(reserved["size"]), list(reserved["used"])
            ranges = tuple(tuple(pair) for pair in payload.get("cjk_ranges", DEFAULT_CJK_RANGES))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed tokenizer model: {exc}") from exc

        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported tokenizer model version {version}")
        for required in ("blank", "unk"):
            if len(specials.get(required, ())) != 1:
                raise ModelFormatError(f"model must define exactly one {required} token")
        ordered = [name for names in specials.values() for name in names]
        offset = len(ordered)
        if vocab[:offset] != ordered:
            raise ModelFormatError("special tokens must occupy the first ids in registry order")
        if len(used) > size or offset + size > len(vocab):
            raise ModelFormatError("reserved pool does not fit the vocabulary")
        for slot in range(size):
            expected = used[slot] if slot < len(used) else RESERVED_TEMPLATE.format(slot)
            if vocab[offset + slot] != expected:
                raise ModelFormatError(f"reserved slot {slot} holds {vocab[offset + slot]!r}, expected {expected!r}")
        return cls(
            id_to_token=vocab,
            merges=merges,
            specials=specials,
            reserved_size=size,
            reserved_used=used,
            cjk_ranges=ranges,
        )


def _check_specials(specials: Mapping[str, Sequence[str]]) -> Dict[str, List[str]]:
    registry: Dict[str, List[str]] = {}
    seen = set()
    for category, names in specials.items():
        registry[category] = []
        for name in names:
            if not SPECIAL_PATTERN.fullmatch(name):
                raise InvalidTokenNameError(f"special token {name!r} must look like <...>")
            if RESERVED_PATTERN.fullmatch(name):
                raise InvalidTokenNameError(f"{name} collides with the reserved slot names")
            if name in seen:
                raise DuplicateNameError(f"special token {name} registered twice")
            seen.add(name)
            registry[category].append(name)
    for required in ("blank", "unk"):
        if len(registry.get(required, ())) != 1:
            raise TokenizerError(f"exactly one {required} token is required")
    return registry


def _cjk_runs(text: str, ranges: Sequence[Tuple[int, int]]) -> Iterator[Tuple[str, bool]]:
    """Split text into maximal CJK / non-CJK runs."""
    start = 0
    current = None
    for index, char in enumerate(text):
        point = ord(char)
        is_cjk = any(low <= point <= high for low, high in ranges)
        if current is None:
            current = is_cjk
        elif is_cjk != current:
            yield text[start:index], current
            start, current = index, is_cjk
    if current is not None:
        yield text[start:], current


def _pre_segment(run: str) -> List[str]:
    """Words are runs of word characters; anything else stands alone."""
    return WORD_PATTERN.findall(run)


def _merge_symbols(symbols: List[str], pair: Tuple[str, str]) -> List[str]:
    left, right = pair
    merged = []
    index = 0
    while index < len(symbols):
        if index < len(symbols) - 1 and symbols[index] == left and symbols[index + 1] == right:
            merged.append(left + right)
            index += 2
        else:
            merged.append(symbols[index])
            index += 1
    return merged


def _learn_merges(words: Counter, budget: int, known: set, min_frequency: int) -> Tuple[List[Tuple[str, str]], List[str]]:
    """Sennrich-style BPE; ties in pair frequency go to the smaller pair."""
    splits = {word: list(word) for word in words}
    pair_counts: Counter = Counter()
    pair_words: Dict[Tuple[str, str], set] = defaultdict(set)
    for word, count in words.items():
        symbols = splits[word]
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += count
            pair_words[pair].add(word)

    merges: List[Tuple[str, str]] = []
    new_tokens: List[str] = []
    while len(new_tokens) < budget:
        candidates = [(pair, count) for pair, count in pair_counts.items() if count >= min_frequency]
        if not candidates:
            break
        best, _ = min(candidates, key=lambda item: (-item[1], item[0]))
        merges.append(best)
        token = best[0] + best[1]
        if token not in known:
            known.add(token)
            new_tokens.append(token)

        for word in sorted(pair_words.pop(best, ())):
            old = splits[word]
            new = _merge_symbols(old, best)
            if new == old:
                continue
            count = words[word]
            for pair in zip(old, old[1:]):
                pair_counts[pair] -= count
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
            for pair in zip(new, new[1:]):
                pair_counts[pair] += count
                pair_words[pair].add(word)
            splits[word] = new
        pair_counts.pop(best, None)
    return merges, new_tokens


def build_tokenizer(corpus: Iterable[str], config: Optional[TokenizerConfig] = None) -> TokenizerModel:
    """Train a hybrid tokenizer on ``corpus`` (an iterable of text lines)."""
    config = config or TokenizerConfig()
    lines = [unicodedata.normalize("NFC", line.rstrip("\r\n")) for line in corpus]
    if not lines:
        raise TokenizerError("corpus is empty")

    specials = _check_specials(config.specials)
    reserved = [RESERVED_TEMPLATE.format(slot) for slot in range(config.reserved_dialect_count)]
    scratch = TokenizerModel(
        id_to_token=[name for names in specials.values() for name in names] + reserved,
        merges=[],
        specials=specials,
        reserved_size=len(reserved),
        cjk_ranges=tuple(config.cjk_ranges),
    )

    cjk_chars: set = set()
    base_chars: set = set()
    words: Counter = Counter()
    for line in lines:
        for piece, is_special in scratch.split_specials(line):
            if is_special:
                continue
            for run, is_cjk in _cjk_runs(piece, scratch.cjk_ranges):
                if is_cjk:
                    cjk_chars.update(run)
                    continue
                for segment in _pre_segment(run):
                    base_chars.update(segment)
                    if len(segment) > 1:
                        words[segment] += 1

    fixed = scratch.size + len(base_chars) + len(cjk_chars)
    if config.target_vocab_size < fixed:
        raise BudgetExhaustedError(
            f"target vocabulary {config.target_vocab_size} cannot hold {scratch.size} specials/reserved, "
            f"{len(base_chars)} base characters and {len(cjk_chars)} CJK characters"
        )

    vocab = scratch.id_to_token + sorted(base_chars) + sorted(cjk_chars)
    merges, merged_tokens = _learn_merges(
        words, config.target_vocab_size - fixed, set(vocab), config.min_pair_frequency
    )
    model = TokenizerModel(
        id_to_token=vocab + merged_tokens,
        merges=merges,
        specials=specials,
        reserved_size=len(reserved),
        cjk_ranges=tuple(config.cjk_ranges),
    )
    logger.info(
        "built tokenizer: %d tokens (%d cjk, %d base, %d merged), %d free dialect slots",
        model.size, len(cjk_chars), len(base_chars), len(merged_tokens), model.free_slots,
    )
    return model


def encode(text: str, model: TokenizerModel) -> TokenSequence:
    ids: List[int] = []
    kinds: List[TokenKind] = []
    unk = model.unk_id
    unk_name = model.id_to_token[unk]

    def emit(token: str, kind: TokenKind) -> None:
        token_id = model.vocab.get(token)
        if token_id is None:
            ids.append(unk)
            kinds.append(TokenKind.UNK)
        else:
            ids.append(token_id)
            kinds.append(kind)

    text = unicodedata.normalize("NFC", text)
    for piece, is_special in model.split_specials(text):
        if is_special:
            emit(piece, TokenKind.SPECIAL)
            continue
        for run, is_cjk in _cjk_runs(piece, model.cjk_ranges):
            if is_cjk:
                for char in run:
                    emit(char, TokenKind.CJK_CHAR)
                continue
            for segment in _pre_segment(run):
                for token in model._bpe.tokenize(segment):
                    emit(token.value, TokenKind.UNK if token.value == unk_name else TokenKind.BPE)
    return TokenSequence(tuple(ids), tuple(kinds))


def sequence_from_ids(ids: Sequence[int], model: TokenizerModel) -> TokenSequence:
    """Wrap raw ids (e.g. decoder output) with their provenance flags."""
    kinds = []
    for token_id in ids:
        if not 0 <= token_id < model.size:
            raise TokenIdOutOfRangeError(f"token id {token_id} outside [0, {model.size})")
        token = model.id_to_token[token_id]
        if token_id == model.unk_id:
            kinds.append(TokenKind.UNK)
        elif model.is_special_id(token_id):
            kinds.append(TokenKind.SPECIAL)
        elif len(token) == 1 and model.is_cjk(token):
            kinds.append(TokenKind.CJK_CHAR)
        else:
            kinds.append(TokenKind.BPE)
    return TokenSequence(tuple(ids), tuple(kinds))


def decode(ids: Union[TokenSequence, Sequence[int]], model: TokenizerModel) -> str:
    pieces = []
    for token_id in ids:
        if not 0 <= token_id < model.size:
            raise TokenIdOutOfRangeError(f"token id {token_id} outside [0, {model.size})")
        pieces.append(model.id_to_token[token_id])
    return "".join(pieces)


def register_dialect(model: TokenizerModel, name: str) -> int:
    """Bind ``name`` to the next free reserved slot and return its id."""
    if not DIALECT_PATTERN.fullmatch(name):
        raise InvalidTokenNameError(f"dialect token {name!r} must look like <UPPERCASE>")
    if RESERVED_PATTERN.fullmatch(name):
        raise InvalidTokenNameError(f"{name} collides with the reserved slot names")
    with model._lock:
        if name in model.vocab:
            raise DuplicateNameError(f"{name} is already registered")
        if model.free_slots == 0:
            raise PoolExhaustedError(f"all {model.reserved_size} reserved dialect slots are in use")
        slot_id = model.reserved_offset + len(model.reserved_used)
        del model.vocab[model.id_to_token[slot_id]]
        model.id_to_token[slot_id] = name
        model.vocab[name] = slot_id
        model.reserved_used.append(name)
        model._refresh_special_pattern()
    logger.info("registered dialect %s at id %d", name, slot_id)
    return slot_id


def vocab_breakdown(model: TokenizerModel) -> Dict[str, int]:
    counts = {"specials": model.reserved_offset, "reserved": model.reserved_size,
              "reserved_used": len(model.reserved_used), "base": 0, "cjk": 0, "bpe": 0}
    for token in model.id_to_token[model.reserved_offset + model.reserved_size:]:
        if len(token) == 1:
            counts["cjk" if model.is_cjk(token) else "base"] += 1
        else:
            counts["bpe"] += 1
    counts["total"] = model.size
    return counts


def save_model(model: TokenizerModel, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(model.to_dict(), handle, ensure_ascii=False, indent=1)
            handle.write("\n")
    except OSError as exc:
        raise TokenizerError(f"cannot write tokenizer model {path}: {exc}") from exc


def load_model(path: str) -> TokenizerModel:
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise ModelFormatError(f"cannot read tokenizer model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not valid JSON: {exc}") from exc
    return TokenizerModel.from_dict(payload)
