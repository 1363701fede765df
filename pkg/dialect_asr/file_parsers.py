import json
import re
from typing import Dict, Iterable, List

from .datapipe import ManifestRecord
from .decoder import Hypothesis
from .exceptions import DecoderError, HotwordListError, ManifestError, SamplingError


class InputParser:
    """Read and write the plain-text formats the command line works with"""

    @staticmethod
    def parse_manifest(file_path: str) -> List[ManifestRecord]:
        """
        Parse a JSON-lines manifest, one record per line
        Example:
        {"id": "utt1", "audio_path": "a/utt1.wav", "duration_s": 3.2, "text": "你好", "dialect": "WU"}
        """
        records = []
        seen = set()
        with InputParser._open(file_path, ManifestError) as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = ManifestRecord.from_payload(json.loads(line))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ManifestError(f"{file_path}:{line_no}: {exc}") from exc
                if record.id in seen:
                    raise ManifestError(f"{file_path}:{line_no}: duplicate record id {record.id!r}")
                seen.add(record.id)
                records.append(record)
        return records

    @staticmethod
    def write_manifest(file_path: str, records: Iterable[ManifestRecord]) -> None:
        with InputParser._create(file_path, ManifestError) as handle:
            for record in records:
                payload = record.to_payload()
                payload.pop('has_audio')
                handle.write(json.dumps(payload, ensure_ascii=False, sort_keys=True) + '\n')

    @staticmethod
    def parse_hotwords(file_path: str) -> List[str]:
        """Parse a hotword list: one phrase per line, blank lines and #-comments skipped"""
        with InputParser._open(file_path, HotwordListError) as handle:
            phrases = [line.strip() for line in handle]
        return [phrase for phrase in phrases if phrase and not phrase.startswith('#')]

    @staticmethod
    def parse_lines(file_path: str) -> List[str]:
        """Parse a reference or hypothesis file, one utterance per line"""
        with InputParser._open(file_path, ManifestError) as handle:
            return [line.rstrip('\r\n') for line in handle]

    @staticmethod
    def parse_nbest(file_path: str) -> List[Hypothesis]:
        """
        Parse an n-best list
        Example:
        [{"tokens": [5, 9], "log_score": -1.2, "bonus": 0.5}, ...]
        """
        with InputParser._open(file_path, DecoderError) as handle:
            try:
                payload = json.load(handle)
            except ValueError as exc:
                raise DecoderError(f"{file_path}: not a JSON n-best list: {exc}") from exc
        if isinstance(payload, dict):
            payload = payload.get('nbest', [])
        if not isinstance(payload, list):
            raise DecoderError(f"{file_path}: expected a list of hypotheses")
        return [Hypothesis.from_dict(item) for item in payload]

    @staticmethod
    def write_nbest(file_path: str, nbest: Iterable[Hypothesis]) -> None:
        with InputParser._create(file_path, DecoderError) as handle:
            json.dump([hypothesis.to_dict() for hypothesis in nbest], handle)
            handle.write('\n')

    @staticmethod
    def parse_id_list(text: str) -> List[int]:
        """Parse token ids written as "5,9,12" or "5 9 12" """
        parts = [part for part in re.split(r'[,\s]+', text.strip()) if part]
        try:
            return [int(part) for part in parts]
        except ValueError as exc:
            raise DecoderError(f"cannot parse token ids from {text!r}") from exc

    @staticmethod
    def parse_sizes(text: str) -> Dict[str, float]:
        """
        Parse dataset sizes given on the command line
        Example:
        kespeech=1000,aishell=120   or   1000,120   (names become dataset0, dataset1)
        """
        sizes: Dict[str, float] = {}
        for index, part in enumerate(p.strip() for p in text.split(',') if p.strip()):
            name, _, value = part.rpartition('=')
            try:
                sizes[name.strip() or f"dataset{index}"] = float(value)
            except ValueError as exc:
                raise SamplingError(f"cannot parse dataset size {part!r}") from exc
        return sizes

    @staticmethod
    def _open(file_path: str, error):
        try:
            return open(file_path, encoding='utf-8')
        except OSError as exc:
            raise error(f"cannot read {file_path}: {exc}") from exc

    @staticmethod
    def _create(file_path: str, error):
        try:
            return open(file_path, 'w', encoding='utf-8')
        except OSError as exc:
            raise error(f"cannot write {file_path}: {exc}") from exc
