"""Accuracy, provider-fairness, coverage, temporal and genre metrics.

Ranked lists are sequences of item ids, best first. Ground truth is a
collection of relevant item ids. Fairness metrics operate on per-item
recommendation counts.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

SUPPORT_POLICIES = ("nonzero_only", "full_catalog")


class EmptyGroundTruth(ValueError):
    """Raised when an accuracy metric is asked about a user with no test items.

    Callers are expected to exclude such users and report them.
    """


def _truth_set(truth) -> set:
    truth = set(truth)
    if not truth:
        raise EmptyGroundTruth("ground truth is empty; user must be excluded")
    return truth


def _check_k(k):
    if k < 1:
        raise ValueError("k must be >= 1")


def ndcg_at_k(recs: Sequence, truth, k: int) -> float:
    truth = _truth_set(truth)
    _check_k(k)
    dcg = sum(1.0 / math.log2(i + 2) for i, item in enumerate(recs[:k]) if item in truth)
    if dcg == 0.0:
        return 0.0
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(len(truth), k)))
    return dcg / idcg


def _hits(recs, truth, k) -> int:
    return sum(1 for item in recs[:k] if item in truth)


def recall_at_k(recs: Sequence, truth, k: int) -> float:
    truth = _truth_set(truth)
    _check_k(k)
    return _hits(recs, truth, k) / len(truth)


def hit_rate_at_k(recs: Sequence, truth, k: int) -> float:
    """Hits inside the top-``k`` divided by ``k``.

    Note this is a per-list precision-style ratio; the 0/1 "any hit" quantity
    is :func:`hit_indicator_at_k`.
    """
    truth = _truth_set(truth)
    _check_k(k)
    return _hits(recs, truth, k) / k


def hit_indicator_at_k(recs: Sequence, truth, k: int) -> float:
    truth = _truth_set(truth)
    _check_k(k)
    return 1.0 if _hits(recs, truth, k) else 0.0


def average_rank_at_k(recs: Sequence, truth, k: int) -> Optional[float]:
    """Mean 1-based rank of the hits in the top-``k``; ``None`` without hits."""
    truth = _truth_set(truth)
    _check_k(k)
    ranks = [i + 1 for i, item in enumerate(recs[:k]) if item in truth]
    if not ranks:
        return None
    return sum(ranks) / len(ranks)


# --------------------------------------------------------------------------
# provider fairness


def count_vector(all_recs: Iterable[Sequence], catalog=None, support: str = "nonzero_only") -> np.ndarray:
    """Per-item recommendation counts pooled over all lists.

    ``nonzero_only`` keeps just the items recommended at least once;
    ``full_catalog`` pads with zeros for every catalog item never recommended.
    Entries are ordered by item id so the result is reproducible.
    """
    if support not in SUPPORT_POLICIES:
        raise ValueError(f"unknown support policy {support!r}")
    counts = Counter(item for recs in all_recs for item in recs)
    if support == "full_catalog":
        if catalog is None:
            raise ValueError("full_catalog support needs a catalog")
        ids = sorted(set(catalog) | set(counts))
    else:
        ids = sorted(counts)
    return np.array([counts.get(i, 0) for i in ids], dtype=np.int64)


def _as_counts(counts) -> np.ndarray:
    x = np.asarray(counts, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("counts must be a non-empty 1-d vector")
    if np.any(x < 0):
        raise ValueError("counts must be non-negative")
    if x.sum() <= 0:
        raise ValueError("counts must contain at least one positive entry")
    return x


def gini(counts) -> float:
    """Gini index of recommendation counts.

    With ``x`` sorted ascending, ``sum((2i - n - 1) x_i) / (n sum(x))``. The
    maximum, one item taking every slot, is ``(n - 1) / n`` rather than 1.
    """
    x = np.sort(_as_counts(counts))
    n = x.size
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) * x) / (n * x.sum()))


def hhi(counts) -> float:
    # sum(x^2) / sum(x)^2: integer-valued sums stay exact, leaving one rounding
    x = _as_counts(counts)
    total = x.sum()
    return float(np.dot(x, x) / (total * total))


def entropy(counts) -> float:
    """Shannon entropy in nats over the positive shares.

    Equal counts are grouped, so each distinct value ``v`` held by ``m``
    items contributes ``(m v / S) ln(S / v)``. A uniform vector then
    evaluates to exactly ``ln n`` and a single-item vector to exactly 0.
    """
    x = _as_counts(counts)
    total = x.sum()
    values, multiplicity = np.unique(x[x > 0], return_counts=True)
    return float(np.sum((multiplicity * values / total) * np.log(total / values))) + 0.0


def coverage(all_recs: Iterable[Sequence], catalog) -> float:
    n = len(catalog)
    if n == 0:
        raise ValueError("catalog is empty")
    distinct = {item for recs in all_recs for item in recs}
    return len(distinct) / n


# --------------------------------------------------------------------------
# content-centric


@dataclass(frozen=True)
class TemporalStats:
    median_year: Optional[float]
    std_year: Optional[float]
    n_dated: int
    n_skipped: int


def temporal_stats(all_recs: Iterable[Sequence], catalog) -> TemporalStats:
    """Median and population std of release years over every recommendation slot."""
    years = []
    skipped = 0
    for recs in all_recs:
        for item in recs:
            year = getattr(catalog[item], "release_year", None)
            if year is None:
                skipped += 1
            else:
                years.append(year)
    if not years:
        return TemporalStats(None, None, 0, skipped)
    arr = np.asarray(years, dtype=float)
    return TemporalStats(float(np.median(arr)), float(np.std(arr)), len(years), skipped)


def genre_histogram(all_recs: Iterable[Sequence], catalog) -> list:
    """``[(genre, count), ...]`` by descending count, ties alphabetical."""
    counts = Counter()
    for recs in all_recs:
        for item in recs:
            counts.update(catalog[item].genres)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def longtail_curve(counts) -> list:
    """``[(rank, count), ...]`` with counts sorted descending and 1-based rank."""
    x = _as_counts(counts)
    ordered = sorted((int(v) for v in x), reverse=True)
    return [(rank, c) for rank, c in enumerate(ordered, start=1)]
