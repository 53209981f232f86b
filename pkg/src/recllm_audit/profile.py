"""User-profile pieces consumed by the prompts.

* a *context* block: the user's most preferred train items, optionally
  weighted towards recent consumption;
* an *example* block: the newest train interactions, split into "recently
  watched" inputs and the demonstrations the prompt says should be recommended;
* an optional demographic clause ("is female, and ").
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

from .dataset import Interaction, chrono_key
from .errors import ConfigError, SamplingError

STRATEGIES = ("frequent", "recency_frequent")
DEMOGRAPHICS = ("none", "gender", "age_group")
DEFAULT_CONTEXT_SIZE = 5
DEFAULT_DECAY = 0.1


@dataclass(frozen=True)
class ProfileEntry:
    item_id: object
    value: Optional[float]  # rating (movies) or play count / 1-5 score (music)
    timestamp: float


@dataclass(frozen=True)
class ContextProfile:
    user_id: object
    entries: tuple
    strategy: str


@dataclass(frozen=True)
class ExampleBlock:
    recent_inputs: tuple
    demonstrations: tuple


@dataclass(frozen=True)
class DemographicClause:
    attribute: str = "none"
    rendered_text: str = ""


def _aggregate(history: Sequence[Interaction]) -> list:
    """Collapse repeated plays into one entry per item.

    Preference is the (latest) rating when ratings exist, otherwise the play
    count; the timestamp is the most recent interaction.
    """
    pref = {}
    last = {}
    plays = defaultdict(int)
    for x in sorted(history, key=chrono_key):
        plays[x.item_id] += 1
        last[x.item_id] = x.timestamp
        if x.rating is not None:
            pref[x.item_id] = float(x.rating)
    return [
        ProfileEntry(iid, pref.get(iid, float(plays[iid])), last[iid])
        for iid in sorted(plays)
    ]


def sample_context(train_history: Sequence[Interaction], strategy: str = "frequent",
                   n: int = DEFAULT_CONTEXT_SIZE, decay: float = DEFAULT_DECAY,
                   user_id=None) -> ContextProfile:
    """Pick ``n`` context items from a user's train history.

    ``frequent`` ranks by rating (or play count). ``recency_frequent`` ranks by
    ``norm_pref * exp(-decay * age_rank)``, where ``norm_pref`` is min-max
    normalised over the history and ``age_rank`` is 0 for the newest item.
    Ties fall back to recency, then item id.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown context strategy {strategy!r}")
    if n < 1:
        raise ConfigError("context size must be >= 1")
    if not train_history:
        raise SamplingError("cannot sample a context from an empty history")
    if user_id is None:
        user_id = train_history[0].user_id
    entries = _aggregate(train_history)

    if strategy == "frequent":
        key = lambda e: (-e.value, -e.timestamp, e.item_id)  # noqa: E731
    else:
        by_age = sorted(entries, key=lambda e: (-e.timestamp, e.item_id))
        age_rank = {e.item_id: r for r, e in enumerate(by_age)}
        lo = min(e.value for e in entries)
        hi = max(e.value for e in entries)
        span = hi - lo

        def score(e):
            norm = (e.value - lo) / span if span > 0 else 1.0
            return norm * math.exp(-decay * age_rank[e.item_id])

        key = lambda e: (-score(e), -e.timestamp, e.item_id)  # noqa: E731

    chosen = sorted(entries, key=key)[:n]
    return ContextProfile(user_id, tuple(chosen), strategy)


def play_count_scores(history: Sequence[Interaction]) -> dict:
    """Map per-item play counts onto integer 1..5 via min-max scaling.

    A history where every item has the same count maps everything to 5.
    """
    counts = defaultdict(int)
    for x in history:
        counts[x.item_id] += 1
    lo, hi = min(counts.values()), max(counts.values())
    if hi == lo:
        return {iid: 5 for iid in counts}
    return {iid: 1 + round(4 * (c - lo) / (hi - lo)) for iid, c in counts.items()}


def take_examples(train_history: Sequence[Interaction], n_recent: int = 5,
                  n_demos: int = 0) -> ExampleBlock:
    """Newest ``n_recent + n_demos`` interactions, oldest first.

    The earliest ``n_recent`` become the "recently watched" inputs and the
    final ``n_demos`` the demonstrations. Unrated interactions (music) carry
    their 1-5 play-count score as the value.
    """
    if n_demos not in (0, 1, 2):
        raise ConfigError("n_demos must be 0, 1 or 2")
    need = n_recent + n_demos
    if len(train_history) < need:
        raise SamplingError(
            f"history has {len(train_history)} interactions, {need} needed "
            f"(short by {need - len(train_history)})"
        )
    ordered = sorted(train_history, key=chrono_key)
    window = ordered[len(ordered) - need:] if need else []
    scores = None
    if any(x.rating is None for x in window):
        scores = play_count_scores(train_history)

    def entry(x):
        value = x.rating if x.rating is not None else scores[x.item_id]
        return ProfileEntry(x.item_id, value, x.timestamp)

    entries = [entry(x) for x in window]
    return ExampleBlock(tuple(entries[:n_recent]), tuple(entries[n_recent:]))


def build_profile(train_history: Sequence[Interaction], strategy: str = "frequent",
                  n_context: int = DEFAULT_CONTEXT_SIZE, n_recent: int = 5, n_demos: int = 0,
                  decay: float = DEFAULT_DECAY):
    """Context and example blocks for one user, kept disjoint.

    With demonstrations the context is sampled from the history that precedes
    the example window; zero-shot prompts sample from the whole history.
    Music context values are converted to the 1-5 play-count scale.
    """
    if not train_history:
        raise SamplingError("empty train history")
    user_id = train_history[0].user_id
    if n_demos == 0:
        examples = ExampleBlock((), ())
        pool = list(train_history)
    else:
        examples = take_examples(train_history, n_recent, n_demos)
        window = {(e.item_id, e.timestamp) for e in examples.recent_inputs + examples.demonstrations}
        pool = [x for x in train_history if (x.item_id, x.timestamp) not in window]
        if not pool:
            raise SamplingError(f"user {user_id!r} has no history left for the context block")
    context = sample_context(pool, strategy, n_context, decay, user_id=user_id)
    if any(x.rating is None for x in train_history):
        scores = play_count_scores(train_history)
        context = ContextProfile(
            user_id,
            tuple(ProfileEntry(e.item_id, scores[e.item_id], e.timestamp) for e in context.entries),
            context.strategy,
        )
    return context, examples


_GENDER = {"f": "female", "female": "female", "m": "male", "male": "male"}


def age_group(age: float, median_age: float) -> str:
    """``young`` strictly below the median user age, ``old`` otherwise."""
    return "young" if age < median_age else "old"


def render_demographic(attribute: str = "none", user_metadata: Optional[dict] = None) -> DemographicClause:
    """Clause inserted after "The user " in sequential prompts.

    ``user_metadata`` holds ``gender`` (``F``/``M``/``female``/``male``) and
    either ``age_group`` (``young``/``old``) or ``age`` together with
    ``median_age``.
    """
    if attribute not in DEMOGRAPHICS:
        raise ConfigError(f"unknown demographic attribute {attribute!r}")
    if attribute == "none":
        return DemographicClause("none", "")
    meta = user_metadata or {}
    if attribute == "gender":
        raw = meta.get("gender")
        if raw is None:
            raise SamplingError("user metadata lacks 'gender'")
        label = _GENDER.get(str(raw).strip().lower())
        if label is None:
            raise SamplingError(f"unrecognised gender value {raw!r}")
    else:
        label = meta.get("age_group")
        if label is None:
            if meta.get("age") is None or meta.get("median_age") is None:
                raise SamplingError("user metadata lacks 'age_group' (or 'age' + 'median_age')")
            label = age_group(float(meta["age"]), float(meta["median_age"]))
        if label not in ("young", "old"):
            raise SamplingError(f"unrecognised age group {label!r}")
    return DemographicClause(attribute, f"is {label}, and ")
