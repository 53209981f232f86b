"""Bootstrap confidence intervals and cross-run stability summaries."""

from __future__ import annotations

import itertools
import math
import statistics
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

RNG_ALGORITHM = "numpy.random.PCG64"


@dataclass(frozen=True)
class BootstrapResult:
    mean_of_means: float
    ci_low: float
    ci_high: float
    B: int
    seed: Optional[int]
    rng: str = RNG_ALGORITHM
    replicate_means: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {
            "mean_of_means": self.mean_of_means,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "B": self.B,
            "seed": self.seed,
            "rng": self.rng,
        }


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile (``p`` in (0, 1]) of an already sorted sequence."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no values")
    rank = max(1, math.ceil(p * n - 1e-12))
    return float(sorted_values[min(rank, n) - 1])


def bootstrap_mean_ci(values, B: int = 1000, seed: int = 0, enumerate_all: bool = False,
                      level: float = 0.95) -> BootstrapResult:
    """Percentile bootstrap of the mean.

    Draws ``B`` resamples of ``len(values)`` with replacement from a seeded
    PCG64 generator. With ``enumerate_all`` every one of the ``n**n`` index
    tuples is used once instead, which is only feasible for tiny inputs.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("bootstrap needs a non-empty 1-d vector of values")
    n = x.size
    if enumerate_all:
        if n > 7:
            raise ValueError("full enumeration is limited to n <= 7")
        idx = np.array(list(itertools.product(range(n), repeat=n)), dtype=np.int64)
        seed = None
    else:
        if B < 1:
            raise ValueError("B must be >= 1")
        rng = np.random.Generator(np.random.PCG64(seed))
        idx = rng.integers(0, n, size=(B, n))
    means = x[idx].mean(axis=1)
    ordered = np.sort(means)
    alpha = (1.0 - level) / 2.0
    return BootstrapResult(
        mean_of_means=float(means.mean()),
        ci_low=nearest_rank(ordered, alpha),
        ci_high=nearest_rank(ordered, 1.0 - alpha),
        B=int(idx.shape[0]),
        seed=seed,
        replicate_means=means,
    )


@dataclass(frozen=True)
class StabilityResult:
    per_run_values: tuple
    mean: float
    std: float
    range: float

    def as_dict(self) -> dict:
        return {
            "per_run_values": list(self.per_run_values),
            "mean": self.mean,
            "std": self.std,
            "range": self.range,
        }


def stability_summary(per_run) -> StabilityResult:
    """Mean, sample std (n-1 denominator) and max-min over repeated runs."""
    values = [float(v) for v in per_run]
    if len(values) < 2:
        raise ValueError("stability needs at least 2 runs")
    return StabilityResult(
        per_run_values=tuple(values),
        mean=statistics.fmean(values),
        std=statistics.stdev(values),
        range=max(values) - min(values),
    )
