"""Layered configuration: built-in settings < DOLPHIN_CONFIG file < flags."""
import dataclasses
import logging
from dataclasses import dataclass, fields
from typing import Any, Dict, Optional

from django.conf import settings
from dotenv import dotenv_values

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

SIZE_UNITS = ("utterances", "hours")


@dataclass(frozen=True)
class Config:
    max_duration: float = 30.0
    shard_size: int = 1000
    n_readers: int = 4
    n_buckets: int = 1
    truncate_prob: float = 0.0
    truncate_fraction: float = 0.2
    short_threshold: float = 2.0
    short_fraction: float = 0.0
    alpha: float = 0.5
    size_unit: str = "utterances"
    target_vocab_size: int = 18173
    reserved_dialect_count: int = 80
    psc_threshold: float = -4.0
    soc_threshold: float = -4.0
    prompt_threshold: float = -2.0
    length_normalize: bool = True
    bias_weight: float = 0.5
    n_distractors: int = 5
    prompt_min_match: int = 2
    prompt_bonus: float = 2.0
    beam: int = 10
    token_beam: int = 32
    ctc_weight: float = 0.5
    blank_id: int = 0
    seed: int = 0

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name: str, value: Any) -> Any:
    kind = _FIELD_TYPES[name]
    if isinstance(value, str):
        value = value.strip()
        if kind is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name.upper()}: expected a boolean, got {value!r}")
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind is float:
            return float(value)
        if kind is bool:
            return bool(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name.upper()}: cannot parse {value!r} as {kind.__name__}") from exc


def _check(config: Config) -> Config:
    if config.size_unit not in SIZE_UNITS:
        raise ConfigError(f"SIZE_UNIT must be one of {', '.join(SIZE_UNITS)}")
    if not 0.0 <= config.alpha <= 1.0:
        raise ConfigError("ALPHA must lie in [0, 1]")
    if not 0.0 <= config.ctc_weight <= 1.0:
        raise ConfigError("CTC_WEIGHT must lie in [0, 1]")
    if config.beam < 1 or config.shard_size < 1 or config.n_readers < 1 or config.n_buckets < 1:
        raise ConfigError("BEAM, SHARD_SIZE, N_READERS and N_BUCKETS must be >= 1")
    if config.token_beam < 0:
        raise ConfigError("TOKEN_BEAM must be >= 0 (0 expands every token)")
    if config.bias_weight < 0:
        raise ConfigError("BIAS_WEIGHT must be >= 0")
    return config


def read_config_file(path: str) -> Dict[str, Any]:
    """Parse a KEY=value override file into Config field values."""
    try:
        with open(path, encoding="utf-8") as handle:
            raw = dotenv_values(stream=handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc

    values = {}
    for key, value in raw.items():
        name = key.lower()
        if name not in _FIELD_TYPES:
            raise ConfigError(f"{path}: unknown key {key}")
        if value is None:
            raise ConfigError(f"{path}: key {key} has no value")
        values[name] = _coerce(name, value)
    return values


def load_config(config_path: Optional[str] = None, **overrides) -> Config:
    """Resolve the effective Config.

    ``config_path`` defaults to ``settings.DOLPHIN_CONFIG``. Overrides whose
    value is None are treated as "flag not given".
    """
    values = {}
    for key, value in getattr(settings, "DOLPHIN", {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"settings.DOLPHIN: unknown key {key}")
        values[key] = _coerce(key, value)

    path = config_path or getattr(settings, "DOLPHIN_CONFIG", None)
    if path:
        logger.debug("reading config overrides from %s", path)
        values.update(read_config_file(path))

    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown option {key}")
        values[key] = _coerce(key, value)

    return _check(Config(**values))
