"""Manifest validation, augmentation, bucketing and sharded record storage.

Shard layout (all integers big-endian)::

    b"DOLPSHRD" | u16 version
    repeat: u32 payload length | UTF-8 JSON payload
            [u32 audio length | raw audio]   only when payload["has_audio"]

The JSON payload is the ManifestRecord without its audio bytes, serialized
with sorted keys and compact separators so that re-encoding a record that was
read back reproduces its stored bytes.
"""
import json
import logging
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import CorruptRecordError, InvalidFractionError, ShardIOError

logger = logging.getLogger(__name__)

SHARD_MAGIC = b"DOLPSHRD"
SHARD_VERSION = 1
SHARD_SUFFIX = ".dshard"
INDEX_NAME = "index.json"
# raw audio attached to records is 16-bit mono PCM
SAMPLE_WIDTH = 2

_HEADER = struct.Struct(">8sH")
_LENGTH = struct.Struct(">I")


class RejectReason(str, Enum):
    TOO_LONG = "too-long"
    EMPTY_AUDIO = "empty-audio"
    EMPTY_TEXT = "empty-text"
    UNKNOWN_DIALECT = "unknown-dialect"


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    audio_path: str
    duration_s: float
    text: str
    dialect: str = ""
    dataset: str = ""
    sample_rate: Optional[int] = None
    audio: Optional[bytes] = field(default=None, repr=False)

    def to_payload(self) -> dict:
        payload = asdict(self)
        payload.pop("audio")
        payload["has_audio"] = self.audio is not None
        return payload

    @classmethod
    def from_payload(cls, payload: dict, audio: Optional[bytes] = None) -> "ManifestRecord":
        return cls(
            id=str(payload["id"]),
            audio_path=str(payload.get("audio_path", "")),
            duration_s=float(payload["duration_s"]),
            text=str(payload.get("text", "")),
            dialect=str(payload.get("dialect", "") or ""),
            dataset=str(payload.get("dataset", "") or ""),
            sample_rate=payload.get("sample_rate"),
            audio=audio,
        )


@dataclass(frozen=True)
class Shard:
    path: str
    record_count: int
    byte_length: int
    bucket_id: int = 0


@dataclass
class ValidationResult:
    accepted: List[ManifestRecord] = field(default_factory=list)
    rejected: List[Tuple[ManifestRecord, RejectReason]] = field(default_factory=list)

    def reason_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for _, reason in self.rejected:
            counts[reason.value] = counts.get(reason.value, 0) + 1
        return counts


@dataclass(frozen=True)
class BenchResult:
    readers: int
    shards: int
    records: int
    bytes: int
    seconds: float

    @property
    def mb_per_s(self) -> float:
        return self.bytes / 1e6 / self.seconds if self.seconds > 0 else float("inf")


def validate(
    records: Iterable[ManifestRecord],
    max_duration: float = 30.0,
    dialects: Optional[Iterable[str]] = None,
) -> ValidationResult:
    """Split records into accepted and rejected-with-reason.

    ``dialects``, when given, is the set of registered dialect names (without
    brackets); a non-empty tag outside it is rejected.
    """
    known = set(dialects) if dialects is not None else None
    result = ValidationResult()
    for record in records:
        if not record.duration_s > 0:
            result.rejected.append((record, RejectReason.EMPTY_AUDIO))
        elif record.duration_s > max_duration:
            result.rejected.append((record, RejectReason.TOO_LONG))
        elif not record.text.strip():
            result.rejected.append((record, RejectReason.EMPTY_TEXT))
        elif known is not None and record.dialect and record.dialect not in known:
            result.rejected.append((record, RejectReason.UNKNOWN_DIALECT))
        else:
            result.accepted.append(record)
    if result.rejected:
        logger.info("validation rejected %d of %d records: %s",
                    len(result.rejected), len(result.rejected) + len(result.accepted), result.reason_counts())
    return result


def truncate_augment(record: ManifestRecord, p: float, r: float, seed) -> ManifestRecord:
    """Randomly cut the end of an utterance.

    With probability ``p`` the duration shrinks by u ~ Uniform(0, r * duration),
    u > 0; the result stays strictly positive. Attached audio is cut to
    round(duration * sample_rate) samples.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidFractionError(f"truncation probability must lie in [0, 1], got {p}")
    if not 0.0 < r <= 1.0:
        raise InvalidFractionError(f"truncation fraction must lie in (0, 1], got {r}")
    generator = np.random.default_rng(seed)
    if generator.random() >= p:
        return record

    cut = r * record.duration_s * generator.uniform(np.nextafter(0.0, 1.0), 1.0)
    duration = record.duration_s - cut
    if not duration > 0:
        return record
    audio = record.audio
    if audio is not None and record.sample_rate:
        audio = audio[: round(duration * record.sample_rate) * SAMPLE_WIDTH]
    return replace(record, duration_s=duration, audio=audio)


def augment_all(records: Sequence[ManifestRecord], p: float, r: float, seed: int) -> List[ManifestRecord]:
    return [truncate_augment(record, p, r, (seed, index)) for index, record in enumerate(records)]


def oversample_short(
    records: Sequence[ManifestRecord],
    threshold_s: float,
    target_fraction: float,
    seed: int = 0,
) -> List[ManifestRecord]:
    """Duplicate utterances shorter than ``threshold_s`` until they make up
    ``target_fraction`` of the output. Copies get ids ``<id>~<k>``."""
    if not 0.0 <= target_fraction < 1.0:
        raise InvalidFractionError(f"short-utterance fraction must lie in [0, 1), got {target_fraction}")
    records = list(records)
    short = [index for index, record in enumerate(records) if record.duration_s < threshold_s]
    if not records or target_fraction == 0.0:
        return records
    if not short:
        logger.warning("no utterance shorter than %.2f s; nothing to oversample", threshold_s)
        return records

    extra = math.ceil((target_fraction * len(records) - len(short)) / (1.0 - target_fraction))
    if extra <= 0:
        return records
    generator = np.random.default_rng(seed)
    picks = generator.choice(short, size=extra, replace=True)
    copies: Dict[int, int] = {}
    for index in picks.tolist():
        copies[index] = copies.get(index, 0) + 1
        original = records[index]
        records.append(replace(original, id=f"{original.id}~{copies[index]}"))
    logger.info("oversampled %d short utterances (< %.2f s)", extra, threshold_s)
    return records


def bucket(records: Sequence[ManifestRecord], n_buckets: int) -> List[int]:
    """Assign each record to one of ``n_buckets`` contiguous duration ranges.

    Records are ranked by (duration, original position) and cut into chunks
    whose sizes differ by at most one. Returns the bucket id per record, in
    input order.
    """
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    order = sorted(range(len(records)), key=lambda index: (records[index].duration_s, index))
    assignment = [0] * len(records)
    total = len(order)
    for bucket_id in range(n_buckets):
        for rank in range(bucket_id * total // n_buckets, (bucket_id + 1) * total // n_buckets):
            assignment[order[rank]] = bucket_id
    return assignment


def encode_record(record: ManifestRecord) -> bytes:
    payload = json.dumps(record.to_payload(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    data = payload.encode("utf-8")
    chunks = [_LENGTH.pack(len(data)), data]
    if record.audio is not None:
        chunks += [_LENGTH.pack(len(record.audio)), record.audio]
    return b"".join(chunks)


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CorruptRecordError(f"truncated {what}: expected {size} bytes, found {len(data)}")
    return data


def iter_records(stream: BinaryIO, source: str = "<stream>") -> Iterator[ManifestRecord]:
    """Parse one shard from an open binary stream."""
    header = stream.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise CorruptRecordError(f"{source}: missing shard header")
    magic, version = _HEADER.unpack(header)
    if magic != SHARD_MAGIC:
        raise CorruptRecordError(f"{source}: bad magic {magic!r}")
    if version != SHARD_VERSION:
        raise CorruptRecordError(f"{source}: unsupported shard version {version}")

    while True:
        prefix = stream.read(_LENGTH.size)
        if not prefix:
            return
        if len(prefix) != _LENGTH.size:
            raise CorruptRecordError(f"{source}: truncated length prefix")
        (length,) = _LENGTH.unpack(prefix)
        body = _read_exact(stream, length, f"{source} record payload")
        try:
            payload = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptRecordError(f"{source}: payload is not UTF-8 JSON: {exc}") from exc
        audio = None
        if payload.get("has_audio"):
            (audio_length,) = _LENGTH.unpack(_read_exact(stream, _LENGTH.size, f"{source} audio length"))
            audio = _read_exact(stream, audio_length, f"{source} audio blob")
        try:
            yield ManifestRecord.from_payload(payload, audio)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptRecordError(f"{source}: record is missing fields: {exc}") from exc


class ShardWriter:
    """Writes records to one shard file; one writer per file."""

    def __init__(self, stream: BinaryIO):
        self.stream = stream
        self.record_count = 0
        self.byte_length = _HEADER.size
        stream.write(_HEADER.pack(SHARD_MAGIC, SHARD_VERSION))

    def write(self, record: ManifestRecord) -> None:
        data = encode_record(record)
        self.stream.write(data)
        self.record_count += 1
        self.byte_length += len(data)


def write_shards(
    records: Sequence[ManifestRecord],
    shard_size: int,
    out_dir: str,
    n_buckets: int = 1,
) -> List[Shard]:
    """Partition records in order into shards of ``shard_size``.

    With ``n_buckets`` > 1, records are first grouped by duration bucket and
    each bucket is sharded separately. An ``index.json`` lists the shards.
    """
    if shard_size < 1:
        raise ValueError("shard_size must be >= 1")
    records = list(records)
    assignment = bucket(records, n_buckets) if n_buckets > 1 else [0] * len(records)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ShardIOError(f"cannot create {out_dir}: {exc}") from exc

    shards: List[Shard] = []
    for bucket_id in range(n_buckets):
        members = [record for record, assigned in zip(records, assignment) if assigned == bucket_id]
        for start in range(0, len(members), shard_size):
            path = os.path.join(out_dir, f"shard-{bucket_id:03d}-{start // shard_size:05d}{SHARD_SUFFIX}")
            try:
                with open(path, "wb") as handle:
                    writer = ShardWriter(handle)
                    for record in members[start:start + shard_size]:
                        writer.write(record)
            except OSError as exc:
                raise ShardIOError(f"cannot write {path}: {exc}") from exc
            shards.append(Shard(path, writer.record_count, writer.byte_length, bucket_id))

    index_path = os.path.join(out_dir, INDEX_NAME)
    try:
        with open(index_path, "w", encoding="utf-8") as handle:
            json.dump({"version": SHARD_VERSION, "shards": [
                {**asdict(shard), "path": os.path.basename(shard.path)} for shard in shards
            ]}, handle, indent=1)
    except OSError as exc:
        raise ShardIOError(f"cannot write {index_path}: {exc}") from exc
    logger.info("wrote %d records into %d shards under %s", len(records), len(shards), out_dir)
    return shards


def list_shards(directory: str) -> List[str]:
    """Shard paths of a shard set, from its index when present."""
    index_path = os.path.join(directory, INDEX_NAME)
    try:
        if os.path.exists(index_path):
            with open(index_path, encoding="utf-8") as handle:
                return [os.path.join(directory, entry["path"]) for entry in json.load(handle)["shards"]]
        return sorted(
            os.path.join(directory, name) for name in os.listdir(directory) if name.endswith(SHARD_SUFFIX)
        )
    except (OSError, KeyError, ValueError) as exc:
        raise ShardIOError(f"cannot list shards in {directory}: {exc}") from exc


def read_shard(path: str) -> List[ManifestRecord]:
    try:
        with open(path, "rb") as handle:
            return list(iter_records(handle, path))
    except OSError as exc:
        raise ShardIOError(f"cannot read {path}: {exc}") from exc


def _scan_shard(path: str) -> Tuple[int, int]:
    """Parse a whole shard and report (records, bytes) without shipping records back."""
    count = sum(1 for _ in read_shard(path))
    return count, os.path.getsize(path)


class ShardStream:
    """Iterator over the records of a shard set.

    Each shard is read by exactly one of ``n_readers`` worker processes, so
    readers own disjoint shard subsets. Records of one shard come out in their
    stored order and shards in the order given. The stream may be
    handed to another thread but must be consumed by one at a time.
    """

    def __init__(self, paths: Sequence[str], n_readers: int = 1):
        if n_readers < 1:
            raise ValueError("n_readers must be >= 1")
        self.paths = list(paths)
        self.n_readers = min(n_readers, max(len(self.paths), 1))
        self._executor: Optional[ProcessPoolExecutor] = None

    def __iter__(self) -> Iterator[ManifestRecord]:
        if self.n_readers == 1:
            for path in self.paths:
                yield from read_shard(path)
            return
        self._executor = ProcessPoolExecutor(max_workers=self.n_readers)
        try:
            for records in self._executor.map(read_shard, self.paths):
                yield from records
        finally:
            self.close()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(cancel_futures=True)
            self._executor = None

    def __enter__(self) -> "ShardStream":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def read_shards(paths: Sequence[str], n_readers: int = 1) -> ShardStream:
    return ShardStream(paths, n_readers)


def benchmark_read(paths: Sequence[str], n_readers: int) -> BenchResult:
    """Time a full parse of every shard with ``n_readers`` processes."""
    paths = list(paths)
    started = time.perf_counter()
    if n_readers == 1:
        results = [_scan_shard(path) for path in paths]
    else:
        with ProcessPoolExecutor(max_workers=n_readers) as executor:
            results = list(executor.map(_scan_shard, paths))
    seconds = time.perf_counter() - started
    result = BenchResult(
        readers=n_readers,
        shards=len(paths),
        records=sum(count for count, _ in results),
        bytes=sum(size for _, size in results),
        seconds=seconds,
    )
    logger.info("read %d bytes with %d readers in %.3f s (%.1f MB/s)",
                result.bytes, n_readers, seconds, result.mb_per_s)
    return result


def manifest_stats(records: Iterable[ManifestRecord], bin_s: float = 5.0) -> dict:
    """Per-dialect and per-dataset counts plus a duration histogram."""
    records = list(records)
    dialects: Dict[str, int] = {}
    datasets: Dict[str, int] = {}
    for record in records:
        dialects[record.dialect or "-"] = dialects.get(record.dialect or "-", 0) + 1
        datasets[record.dataset or "-"] = datasets.get(record.dataset or "-", 0) + 1
    durations = np.asarray([record.duration_s for record in records], dtype=np.float64)
    top = max(bin_s, math.ceil(durations.max() / bin_s) * bin_s) if len(durations) else bin_s
    counts, edges = np.histogram(durations, bins=np.arange(0.0, top + bin_s, bin_s))
    return {
        "records": len(records),
        "total_hours": float(durations.sum() / 3600.0) if len(durations) else 0.0,
        "dialects": dict(sorted(dialects.items())),
        "datasets": dict(sorted(datasets.items())),
        "histogram": [
            {"from": float(low), "to": float(high), "count": int(count)}
            for low, high, count in zip(edges[:-1], edges[1:], counts)
        ],
    }
