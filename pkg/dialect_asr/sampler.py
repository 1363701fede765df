"""Temperature-based sampling across datasets of very different sizes.

p_i = n_i ** alpha / sum_j n_j ** alpha. alpha = 1 is natural (size
proportional) sampling, alpha = 0 is uniform sampling over datasets.
"""
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .exceptions import EmptySpecError, InvalidAlphaError, SamplingError

logger = logging.getLogger(__name__)

PRNG_NAME = "numpy.PCG64/1"

STRATEGIES = ("natural", "uniform", "temperature")


@dataclass(frozen=True)
class DatasetSize:
    name: str
    size: float


@dataclass(frozen=True)
class SamplingSpec:
    datasets: Tuple[DatasetSize, ...]
    alpha: float

    def __post_init__(self):
        if not self.datasets:
            raise EmptySpecError("at least one dataset is required")
        if not 0.0 <= self.alpha <= 1.0 or math.isnan(self.alpha):
            raise InvalidAlphaError(f"alpha must lie in [0, 1], got {self.alpha}")
        for dataset in self.datasets:
            if not dataset.size > 0:
                raise SamplingError(f"dataset {dataset.name!r} has non-positive size {dataset.size}")

    @classmethod
    def from_sizes(cls, sizes: Sequence[float], alpha: float, names: Sequence[str] = ()) -> "SamplingSpec":
        names = list(names) or [f"dataset{index}" for index in range(len(sizes))]
        return cls(tuple(DatasetSize(name, size) for name, size in zip(names, sizes)), alpha)


@dataclass(frozen=True)
class SamplingPlan:
    probabilities: Tuple[float, ...]
    seed: int = 0
    alpha: float = 1.0
    names: Tuple[str, ...] = ()
    sizes: Tuple[float, ...] = ()
    prng: str = PRNG_NAME

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "datasets": [
                {"name": name, "size": size, "p": p}
                for name, size, p in zip(self.names, self.sizes, self.probabilities)
            ],
            "seed": self.seed,
            "prng": self.prng,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SamplingPlan":
        try:
            datasets = payload["datasets"]
            plan = cls(
                probabilities=tuple(float(item["p"]) for item in datasets),
                seed=int(payload.get("seed", 0)),
                alpha=float(payload["alpha"]),
                names=tuple(item["name"] for item in datasets),
                sizes=tuple(item["size"] for item in datasets),
                prng=payload.get("prng", PRNG_NAME),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SamplingError(f"malformed sampling plan: {exc}") from exc
        if plan.prng != PRNG_NAME:
            raise SamplingError(f"plan was drawn with {plan.prng}, this build provides {PRNG_NAME}")
        return plan


def strategy_alpha(strategy: str, alpha: float) -> float:
    if strategy == "natural":
        return 1.0
    if strategy == "uniform":
        return 0.0
    if strategy == "temperature":
        return alpha
    raise SamplingError(f"unknown sampling strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")


def sampling_probabilities(spec: SamplingSpec, seed: int = 0) -> SamplingPlan:
    sizes = [dataset.size for dataset in spec.datasets]
    if spec.alpha == 0.0:
        weights = [1.0] * len(sizes)
    elif spec.alpha == 1.0:
        weights = [float(size) for size in sizes]
    else:
        # scale by the largest size first; p_i is scale invariant
        largest = max(sizes)
        weights = [(size / largest) ** spec.alpha for size in sizes]
    total = math.fsum(weights)
    probabilities = tuple(weight / total for weight in weights)
    logger.debug("alpha=%s probabilities=%s", spec.alpha, probabilities)
    return SamplingPlan(
        probabilities=probabilities,
        seed=seed,
        alpha=spec.alpha,
        names=tuple(dataset.name for dataset in spec.datasets),
        sizes=tuple(sizes),
    )


def draw_stream(plan: SamplingPlan, counts_per_dataset: Sequence[int], length: int) -> List[Tuple[int, int]]:
    """Draw ``length`` (dataset-index, item-index) pairs.

    The dataset index follows the plan's probabilities; the item is uniform
    within the dataset, with replacement. Every call builds its own generator
    from the plan seed, so the same plan always yields the same stream.
    """
    if length <= 0:
        return []
    if len(counts_per_dataset) != len(plan.probabilities):
        raise SamplingError("counts_per_dataset must have one entry per dataset in the plan")
    counts = np.asarray(counts_per_dataset, dtype=np.int64)
    if np.any(counts <= 0):
        raise SamplingError("every dataset must hold at least one item")

    generator = np.random.Generator(np.random.PCG64(plan.seed))
    probabilities = np.asarray(plan.probabilities, dtype=np.float64)
    datasets = generator.choice(len(probabilities), size=length, p=probabilities / probabilities.sum())
    items = generator.integers(0, counts[datasets])
    return list(zip(datasets.tolist(), items.tolist()))


def plan_from_records(records: Iterable, alpha: float, size_unit: str = "utterances", seed: int = 0) -> SamplingPlan:
    """Build a plan from manifest records grouped by their ``dataset`` field."""
    if size_unit not in ("utterances", "hours"):
        raise SamplingError(f"unknown size unit {size_unit!r}")
    sizes: "OrderedDict[str, float]" = OrderedDict()
    for record in records:
        amount = record.duration_s / 3600.0 if size_unit == "hours" else 1
        sizes[record.dataset] = sizes.get(record.dataset, 0) + amount
    names = sorted(sizes)
    spec = SamplingSpec.from_sizes([sizes[name] for name in names], alpha, names)
    return sampling_probabilities(spec, seed=seed)
