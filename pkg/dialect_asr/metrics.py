"""Levenshtein alignment and the WER / BWER / UWER / RER evaluation protocol."""
import logging
import unicodedata
from dataclasses import dataclass, fields
from enum import Enum
from typing import Hashable, Iterable, List, Optional, Sequence, Tuple

from .exceptions import EmptyReferenceError, ZeroBaselineError
from .tokenizer import DEFAULT_CJK_RANGES

logger = logging.getLogger(__name__)


class OpKind(str, Enum):
    MATCH = "match"
    SUBSTITUTE = "substitute"
    DELETE = "delete"
    INSERT = "insert"


@dataclass(frozen=True)
class EditOp:
    kind: OpKind
    ref_pos: Optional[int]
    hyp_pos: Optional[int]


@dataclass(frozen=True)
class Alignment:
    ops: Tuple[EditOp, ...]

    def count(self, kind: OpKind) -> int:
        return sum(1 for op in self.ops if op.kind is kind)

    @property
    def errors(self) -> int:
        return sum(1 for op in self.ops if op.kind is not OpKind.MATCH)


def align(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> Alignment:
    """Minimal edit script turning ``ref`` into ``hyp``.

    Among equal-cost scripts the backtrace prefers match, then substitution,
    then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        cost[i][0] = i
    for j in range(m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        row, above = cost[i], cost[i - 1]
        for j in range(1, m + 1):
            diagonal = above[j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            row[j] = min(diagonal, above[j] + 1, row[j - 1] + 1)

    ops: List[EditOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and cost[i - 1][j - 1] == here:
            ops.append(EditOp(OpKind.MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and cost[i - 1][j - 1] + 1 == here:
            ops.append(EditOp(OpKind.SUBSTITUTE, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and cost[i - 1][j] + 1 == here:
            ops.append(EditOp(OpKind.DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(EditOp(OpKind.INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return Alignment(tuple(ops))


def _phrases(hotwords) -> List[Tuple[Hashable, ...]]:
    phrases = []
    for phrase in hotwords or ():
        units = tuple(phrase.tokens) if hasattr(phrase, "tokens") else tuple(phrase)
        if units:
            phrases.append(units)
    return phrases


def tag_biased(ref: Sequence[Hashable], hotwords) -> List[bool]:
    """Mark ref positions covered by any occurrence of any hotword."""
    ref = list(ref)
    mask = [False] * len(ref)
    for phrase in _phrases(hotwords):
        width = len(phrase)
        for start in range(len(ref) - width + 1):
            if tuple(ref[start:start + width]) == phrase:
                for position in range(start, start + width):
                    mask[position] = True
    return mask


@dataclass(frozen=True)
class EvalCounts:
    ref_tokens: int = 0
    biased_ref_tokens: int = 0
    biased_substitutions: int = 0
    biased_deletions: int = 0
    biased_insertions: int = 0
    unbiased_substitutions: int = 0
    unbiased_deletions: int = 0
    unbiased_insertions: int = 0

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    @property
    def unbiased_ref_tokens(self) -> int:
        return self.ref_tokens - self.biased_ref_tokens

    @property
    def biased_errors(self) -> int:
        return self.biased_substitutions + self.biased_deletions + self.biased_insertions

    @property
    def unbiased_errors(self) -> int:
        return self.unbiased_substitutions + self.unbiased_deletions + self.unbiased_insertions

    @property
    def errors(self) -> int:
        return self.biased_errors + self.unbiased_errors

    def to_dict(self) -> dict:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        payload.update(unbiased_ref_tokens=self.unbiased_ref_tokens, biased_errors=self.biased_errors,
                       unbiased_errors=self.unbiased_errors, errors=self.errors)
        return payload


def _format_rate(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


@dataclass(frozen=True)
class EvalReport:
    wer: float
    bwer: Optional[float]
    uwer: Optional[float]
    counts: EvalCounts

    @classmethod
    def from_counts(cls, counts: EvalCounts) -> "EvalReport":
        if counts.ref_tokens == 0:
            raise EmptyReferenceError("reference is empty; WER is undefined")
        wer = 100.0 * counts.errors / counts.ref_tokens
        if counts.biased_ref_tokens == 0:
            logger.warning("no reference token is covered by a hotword; BWER is not applicable")
            return cls(wer, None, wer, counts)
        bwer = 100.0 * counts.biased_errors / counts.biased_ref_tokens
        uwer = 100.0 * counts.unbiased_errors / counts.unbiased_ref_tokens if counts.unbiased_ref_tokens else None
        return cls(wer, bwer, uwer, counts)

    def format_table(self) -> str:
        """``WER (BWER | UWER)`` with two decimals; ``-`` marks not applicable."""
        return f"{_format_rate(self.wer)} ({_format_rate(self.bwer)} | {_format_rate(self.uwer)})"

    def to_dict(self) -> dict:
        return {"wer": self.wer, "bwer": self.bwer, "uwer": self.uwer, "counts": self.counts.to_dict()}


def count_errors(ref: Sequence[Hashable], hyp: Sequence[Hashable], hotwords=()) -> EvalCounts:
    """Attribute each alignment error to the biased or unbiased side.

    Substitutions and deletions follow the mask at their ref position. An
    insertion is biased when the inserted token belongs to some hotword.
    """
    ref, hyp = list(ref), list(hyp)
    mask = tag_biased(ref, hotwords)
    hotword_units = {unit for phrase in _phrases(hotwords) for unit in phrase}
    tally = {f.name: 0 for f in fields(EvalCounts)}
    tally["ref_tokens"] = len(ref)
    tally["biased_ref_tokens"] = sum(mask)
    for op in align(ref, hyp).ops:
        if op.kind is OpKind.MATCH:
            continue
        if op.kind is OpKind.INSERT:
            side = "biased" if hyp[op.hyp_pos] in hotword_units else "unbiased"
            tally[f"{side}_insertions"] += 1
            continue
        side = "biased" if mask[op.ref_pos] else "unbiased"
        suffix = "substitutions" if op.kind is OpKind.SUBSTITUTE else "deletions"
        tally[f"{side}_{suffix}"] += 1
    return EvalCounts(**tally)


def evaluate(ref: Sequence[Hashable], hyp: Sequence[Hashable], hotwords=()) -> EvalReport:
    if not len(ref):
        raise EmptyReferenceError("reference is empty; WER is undefined")
    return EvalReport.from_counts(count_errors(ref, hyp, hotwords))


def evaluate_corpus(pairs: Iterable[Tuple[Sequence[Hashable], Sequence[Hashable]]], hotwords=()) -> EvalReport:
    """Corpus-level rates from counts summed over utterances."""
    total = EvalCounts()
    for ref, hyp in pairs:
        total = total + count_errors(ref, hyp, hotwords)
    return EvalReport.from_counts(total)


def rer(before: float, after: float) -> float:
    """Relative error reduction in percent."""
    if not before > 0:
        raise ZeroBaselineError(f"relative reduction needs a positive baseline, got {before}")
    return 100.0 * (before - after) / before


@dataclass(frozen=True)
class RerReport:
    wer: float
    bwer: Optional[float]
    uwer: Optional[float]

    def format_table(self) -> str:
        def one(value):
            return "-" if value is None else f"{value:.1f}"
        return f"{one(self.wer)} ({one(self.bwer)} | {one(self.uwer)})"

    def to_dict(self) -> dict:
        return {"wer": self.wer, "bwer": self.bwer, "uwer": self.uwer}


def rer_report(before: EvalReport, after: EvalReport) -> RerReport:
    def pair(old, new):
        if old is None or new is None or old <= 0:
            return None
        return rer(old, new)
    return RerReport(rer(before.wer, after.wer), pair(before.bwer, after.bwer), pair(before.uwer, after.uwer))


def _is_cjk(char: str) -> bool:
    code = ord(char)
    return any(low <= code <= high for low, high in DEFAULT_CJK_RANGES)


def scoring_units(text: str) -> List[str]:
    """Split text into scoring units: CJK characters one by one, other text by whitespace."""
    units: List[str] = []
    for word in unicodedata.normalize("NFC", text).lower().split():
        run = ""
        for char in word:
            if _is_cjk(char):
                if run:
                    units.append(run)
                    run = ""
                units.append(char)
            else:
                run += char
        if run:
            units.append(run)
    return units
