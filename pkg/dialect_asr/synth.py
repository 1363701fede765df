"""Synthetic manifests, corpora and posteriorgrams.

Posteriorgrams here stand in for an acoustic model: each planted token gets
one frame, so the CTC score of a string is easy to reason about.
"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from .biasing import Posteriorgram
from .datapipe import SAMPLE_WIDTH, ManifestRecord

logger = logging.getLogger(__name__)

# probability mass placed on the planted tokens of a frame
PLANTED_MASS = 0.9

CJK_SYLLABARY = "北京上海广州深圳天津重庆成都武汉南昌杭州苏州我你他她们的是在有这个人来说到和大小中国语音识别方言模型数据"
LATIN_WORDS = ("hello", "speech", "model", "dialect", "token", "beam", "search", "hotword", "prompt", "shard")


def _frame(vocab_size: int, weights: dict) -> np.ndarray:
    """One probability row: ``weights`` on the given ids, the rest spread evenly."""
    row = np.zeros(vocab_size, dtype=np.float64)
    planted = sum(weights.values())
    others = [index for index in range(vocab_size) if index not in weights]
    if others:
        row[others] = (1.0 - planted) / len(others)
    for index, weight in weights.items():
        row[index] = weight
    return row / row.sum()


def plant_hotword(
    hotword_ids: Sequence[int],
    competitor_ids: Sequence[int],
    vocab_size: int,
    margin: float,
    context_ids: Sequence[int] = (),
    blank: int = 0,
) -> Posteriorgram:
    """Posteriorgram whose unbiased best reading is the competitor.

    Context tokens get one confident frame each. Then, one frame per hotword
    token k, hotword_ids[k] and competitor_ids[k] share PLANTED_MASS with
    log P(competitor) - log P(hotword) = ``margin``. The competitor string
    beats the hotword by len(hotword) * margin in acoustic log-score, so a
    per-token bias above ``margin`` flips the 1-best.
    """
    if len(hotword_ids) != len(competitor_ids) or not hotword_ids:
        raise ValueError("hotword and competitor must be non-empty and of equal length")
    used = set(hotword_ids) | set(competitor_ids)
    if len(used) != 2 * len(hotword_ids) or blank in used:
        raise ValueError("hotword and competitor tokens must be distinct non-blank ids")
    if margin < 0:
        raise ValueError("margin must be >= 0")

    rows = [_frame(vocab_size, {token_id: PLANTED_MASS}) for token_id in context_ids]
    hot = PLANTED_MASS / (1.0 + math.exp(margin))
    for hot_id, rival_id in zip(hotword_ids, competitor_ids):
        rows.append(_frame(vocab_size, {hot_id: hot, rival_id: PLANTED_MASS - hot}))
    return Posteriorgram.from_probs(np.vstack(rows), blank)


def random_posteriorgram(frames: int, vocab_size: int, seed, sharpness: float = 2.0, blank: int = 0) -> Posteriorgram:
    generator = np.random.default_rng(seed)
    return Posteriorgram.from_logits(generator.normal(0.0, sharpness, (frames, vocab_size)), blank)


def synthetic_texts(count: int, seed, min_chars: int = 3, max_chars: int = 12, latin_share: float = 0.2) -> List[str]:
    """Short CJK sentences, some with a Latin word mixed in."""
    generator = np.random.default_rng(seed)
    texts = []
    for _ in range(count):
        length = int(generator.integers(min_chars, max_chars + 1))
        chars = generator.choice(list(CJK_SYLLABARY), size=length).tolist()
        text = "".join(chars)
        if generator.random() < latin_share:
            word = LATIN_WORDS[int(generator.integers(len(LATIN_WORDS)))]
            cut = int(generator.integers(0, length + 1))
            text = f"{text[:cut]} {word} {text[cut:]}".strip()
        texts.append(text)
    return texts


def synthetic_manifest(
    count: int,
    seed,
    datasets: Sequence[str] = ("kespeech", "aishell", "magicdata"),
    dataset_weights: Sequence[float] = (0.7, 0.25, 0.05),
    dialects: Sequence[str] = ("CANTONESE", "SICHUAN", "WU"),
    long_share: float = 0.05,
    empty_share: float = 0.02,
    sample_rate: Optional[int] = None,
) -> List[ManifestRecord]:
    """Records with log-normal durations, a few over-long or empty ones.

    With ``sample_rate`` set every record carries silent 16-bit PCM audio of
    its duration.
    """
    generator = np.random.default_rng(seed)
    texts = synthetic_texts(count, generator.integers(2 ** 32))
    weights = np.asarray(dataset_weights, dtype=np.float64)
    records = []
    for index, text in enumerate(texts):
        draw = generator.random()
        if draw < long_share:
            duration = float(generator.uniform(31.0, 66.0))
        elif draw < long_share + empty_share:
            duration, text = float(generator.uniform(1.0, 5.0)), ""
        else:
            duration = float(np.clip(generator.lognormal(1.3, 0.6), 0.3, 29.5))
        dataset = datasets[int(generator.choice(len(datasets), p=weights / weights.sum()))]
        dialect = dialects[int(generator.integers(len(dialects)))] if dialects else ""
        audio = None
        if sample_rate:
            audio = bytes(round(duration * sample_rate) * SAMPLE_WIDTH)
        records.append(ManifestRecord(
            id=f"utt{index:06d}",
            audio_path=f"{dataset}/utt{index:06d}.wav",
            duration_s=round(duration, 3),
            text=text,
            dialect=dialect,
            dataset=dataset,
            sample_rate=sample_rate,
            audio=audio,
        ))
    return records
