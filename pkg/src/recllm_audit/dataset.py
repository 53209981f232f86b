"""Interaction logs, catalogs, k-core filtering, chronological splits and
dataset statistics.

Two on-disk formats are understood:

* ``movielens_csv``: ``ratings.csv`` (``userId,movieId,rating,timestamp``)
  next to ``movies.csv`` (``movieId,title,genres``, genres pipe-separated).
* ``lastfm_tsv``: the LastFM-1K play log, tab separated
  ``userid, timestamp (ISO-8601), artist-id, artist-name, track-id, track-name``.
  Plays carry no rating.
"""

from __future__ import annotations

import csv
import math
import re
from collections import Counter, defaultdict
from collections.abc import Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SamplingError
from .metrics import gini

FORMATS = ("movielens_csv", "lastfm_tsv")
DOMAINS = ("movies", "music")

_YEAR_RE = re.compile(r"\((\d{4})\)")
_NO_GENRES = "(no genres listed)"


def parse_release_year(title: str) -> Optional[int]:
    """Return the last parenthesized 4-digit year in ``title``, if plausible."""
    found = _YEAR_RE.findall(title)
    if not found:
        return None
    year = int(found[-1])
    if 1870 <= year <= 2100:
        return year
    return None


@dataclass(frozen=True)
class Item:
    item_id: object
    title: str
    release_year: Optional[int] = None
    genres: tuple = ()
    artist: Optional[str] = None

    def __post_init__(self):
        if self.release_year is not None and not 1870 <= self.release_year <= 2100:
            raise ValueError(f"release_year {self.release_year} outside [1870, 2100]")
        if any(not g for g in self.genres):
            raise ValueError(f"empty genre token for item {self.item_id!r}")


class Catalog(Mapping):
    """Immutable ``item_id -> Item`` mapping preserving insertion order."""

    def __init__(self, items: Iterable[Item] = ()):
        self._items: dict = {}
        for item in items:
            if item.item_id in self._items:
                raise ValueError(f"duplicate item_id {item.item_id!r}")
            self._items[item.item_id] = item

    def __getitem__(self, item_id):
        return self._items[item_id]

    def __iter__(self) -> Iterator:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other):
        if not isinstance(other, Catalog):
            return NotImplemented
        return list(self._items.values()) == list(other._items.values())

    def __repr__(self):
        return f"Catalog({len(self)} items)"

    def sorted_ids(self) -> list:
        return sorted(self._items)

    def subset(self, item_ids) -> "Catalog":
        keep = set(item_ids)
        return Catalog(item for iid, item in self._items.items() if iid in keep)


@dataclass(frozen=True)
class Interaction:
    user_id: object
    item_id: object
    rating: Optional[float]
    timestamp: float

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")


def chrono_key(inter: Interaction):
    return (inter.timestamp, inter.item_id)


@dataclass(frozen=True)
class Dataset:
    catalog: Catalog
    interactions: tuple
    domain: str = "movies"

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}")
        object.__setattr__(self, "interactions", tuple(self.interactions))

    def __len__(self):
        return len(self.interactions)

    def user_ids(self) -> list:
        return sorted({x.user_id for x in self.interactions})

    def item_ids(self) -> list:
        return sorted({x.item_id for x in self.interactions})

    def by_user(self) -> dict:
        """Per-user interactions in chronological order (ties by item id)."""
        groups = defaultdict(list)
        for x in self.interactions:
            groups[x.user_id].append(x)
        return {u: sorted(groups[u], key=chrono_key) for u in sorted(groups)}

    def user_counts(self) -> Counter:
        return Counter(x.user_id for x in self.interactions)

    def item_counts(self) -> Counter:
        return Counter(x.item_id for x in self.interactions)

    def replace(self, interactions) -> "Dataset":
        return Dataset(self.catalog, tuple(interactions), self.domain)

    def restrict_users(self, user_ids) -> "Dataset":
        keep = set(user_ids)
        return self.replace(x for x in self.interactions if x.user_id in keep)


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    validation: Optional[Dataset]
    test: Dataset
    ratios: tuple
    dropped_users: tuple = ()


# --------------------------------------------------------------------------
# loading


def _open_csv(path: Path):
    return open(path, newline="", encoding="utf-8")


def _parse_id(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        return raw


def _read_movies(path: Path) -> Catalog:
    items = []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["movieId", "title", "genres"]:
            raise ParseError("expected header movieId,title,genres", line_no=1, path=path)
        for row in reader:
            line_no = reader.line_num
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line_no, path)
            raw_genres = row[2].strip()
            genres = () if raw_genres in ("", _NO_GENRES) else tuple(
                g for g in raw_genres.split("|") if g
            )
            title = row[1].strip()
            try:
                items.append(Item(_parse_id(row[0]), title, parse_release_year(title), genres))
            except ValueError as exc:
                raise ParseError(str(exc), line_no, path) from exc
    try:
        return Catalog(items)
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from exc


def _read_ratings(path: Path, catalog: Catalog) -> list:
    out = []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("missing header", line_no=1, path=path)
        if [h.strip() for h in header] != ["userId", "movieId", "rating", "timestamp"]:
            raise ParseError("expected header userId,movieId,rating,timestamp", 1, path)
        for row in reader:
            line_no = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line_no, path)
            item_id = _parse_id(row[1])
            if item_id not in catalog:
                raise ParseError(f"unknown movieId {row[1]!r}", line_no, path)
            try:
                out.append(Interaction(_parse_id(row[0]), item_id, float(row[2]), float(row[3])))
            except ValueError as exc:
                raise ParseError(str(exc), line_no, path) from exc
    return out


def _parse_iso(raw: str) -> float:
    raw = raw.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def lastfm_item_id(artist_name: str, track_id: str, track_name: str):
    """Track MBID when present, else a synthetic ``artist::track`` key."""
    track_id = track_id.strip()
    return track_id if track_id else f"{artist_name.strip()}::{track_name.strip()}"


def _read_lastfm(path: Path) -> Dataset:
    items = {}
    interactions = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ParseError(f"expected 6 tab-separated fields, got {len(parts)}", line_no, path)
            user, ts, _artist_id, artist, track_id, track = parts
            if not track.strip():
                raise ParseError("empty track name", line_no, path)
            try:
                timestamp = _parse_iso(ts)
            except ValueError as exc:
                raise ParseError(f"bad timestamp {ts!r}", line_no, path) from exc
            iid = lastfm_item_id(artist, track_id, track)
            if iid not in items:
                items[iid] = Item(iid, track.strip(), None, (), artist.strip() or None)
            interactions.append(Interaction(user.strip(), iid, None, timestamp))
    return Dataset(Catalog(items.values()), tuple(interactions), "music")


def load_interactions(path, format: str, items_path=None) -> Dataset:
    """Load an interaction log.

    For ``movielens_csv`` ``path`` may be the directory holding ``ratings.csv``
    and ``movies.csv`` or the ratings file itself; ``items_path`` overrides the
    movies file location (default: ``movies.csv`` beside the ratings file).
    """
    if format not in FORMATS:
        raise ConfigError(f"unknown format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    if format == "lastfm_tsv":
        return _read_lastfm(path)
    ratings_path = path / "ratings.csv" if path.is_dir() else path
    movies_path = Path(items_path) if items_path else ratings_path.parent / "movies.csv"
    catalog = _read_movies(movies_path)
    return Dataset(catalog, tuple(_read_ratings(ratings_path, catalog)), "movies")


def load_user_metadata(path) -> dict:
    """Per-user demographics as ``{user_id: {"gender": ..., "age": ...}}``.

    Accepts MovieLens-1M ``users.dat`` (``UserID::Gender::Age::Occupation::Zip``)
    or a CSV with a header containing ``userId``, ``gender`` and ``age``.
    Missing values are omitted from the user's dict.
    """
    path = Path(path)
    out = {}
    with _open_csv(path) as fh:
        first = fh.readline()
        if "::" in first:
            lines = [(1, first)] + list(enumerate(fh, start=2))
            for line_no, line in lines:
                line = line.strip()
                if not line:
                    continue
                parts = line.split("::")
                if len(parts) < 3:
                    raise ParseError(f"expected UserID::Gender::Age..., got {line!r}", line_no, path)
                try:
                    out[_parse_id(parts[0])] = {"gender": parts[1].strip(), "age": float(parts[2])}
                except ValueError as exc:
                    raise ParseError(str(exc), line_no, path) from exc
            return out
        header = [h.strip() for h in next(csv.reader([first]), [])]
        if "userId" not in header:
            raise ParseError("expected a userId column", 1, path)
        reader = csv.DictReader(fh, fieldnames=header)
        for row in reader:
            meta = {}
            if (row.get("gender") or "").strip():
                meta["gender"] = row["gender"].strip()
            if (row.get("age") or "").strip():
                try:
                    meta["age"] = float(row["age"])
                except ValueError as exc:
                    raise ParseError(str(exc), reader.line_num, path) from exc
            out[_parse_id(row["userId"])] = meta
    return out


def median_age(metadata: dict, user_ids=None) -> Optional[float]:
    """Median age over ``user_ids`` (default: every user with an age)."""
    ids = metadata if user_ids is None else user_ids
    ages = [metadata[u]["age"] for u in ids if u in metadata and "age" in metadata[u]]
    return float(np.median(ages)) if ages else None


# --------------------------------------------------------------------------
# transformations


def kcore_filter(dataset: Dataset, k: int) -> Dataset:
    """Iteratively drop users and items with fewer than ``k`` interactions."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    current = list(dataset.interactions)
    while True:
        users = Counter(x.user_id for x in current)
        items = Counter(x.item_id for x in current)
        kept = [x for x in current if users[x.user_id] >= k and items[x.item_id] >= k]
        if len(kept) == len(current):
            return dataset.replace(kept)
        current = kept


def _segment_sizes(n: int, ratios: Sequence[float]) -> list:
    sizes = [math.floor(r * n + 1e-9) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    return sizes


def chrono_split(dataset: Dataset, ratios: Sequence[float]) -> SplitDataset:
    """Per-user chronological split into train/[validation/]test.

    Each user's interactions are sorted by timestamp (ties by item id) and cut
    into ``len(ratios)`` consecutive segments; every segment but the last gets
    ``floor(ratio * n)`` interactions and the last takes the remainder. Users
    with fewer interactions than segments are dropped and listed in
    ``dropped_users``.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) not in (2, 3):
        raise ConfigError("ratios must have 2 (train/test) or 3 (train/val/test) entries")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigError(f"ratios must be positive and sum to 1, got {ratios}")
    segments = [[] for _ in ratios]
    dropped = []
    for user, history in dataset.by_user().items():
        if len(history) < len(ratios):
            dropped.append(user)
            continue
        start = 0
        for seg, size in zip(segments, _segment_sizes(len(history), ratios)):
            seg.extend(history[start:start + size])
            start += size
    parts = [dataset.replace(seg) for seg in segments]
    if len(parts) == 2:
        return SplitDataset(parts[0], None, parts[1], ratios, tuple(dropped))
    return SplitDataset(parts[0], parts[1], parts[2], ratios, tuple(dropped))


def moderate_activity_users(dataset: Dataset) -> list:
    """Users whose interaction count lies within the interquartile range."""
    counts = dataset.user_counts()
    if not counts:
        return []
    users = sorted(counts)
    vec = np.array([counts[u] for u in users], dtype=float)
    lo, hi = np.percentile(vec, [25, 75])
    return [u for u, c in zip(users, vec) if lo <= c <= hi]


def sample_users(dataset: Dataset, n: int, policy: str = "moderate_activity", seed: int = 0) -> Dataset:
    if policy != "moderate_activity":
        raise ConfigError(f"unknown sampling policy {policy!r}")
    eligible = moderate_activity_users(dataset)
    if len(eligible) < n:
        raise SamplingError(f"requested {n} users but only {len(eligible)} are eligible")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(eligible), size=n, replace=False)
    return dataset.restrict_users(eligible[i] for i in sorted(picked))


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class StatsReport:
    n_users: int
    n_items: int
    n_interactions: int
    interactions_per_user: float
    interactions_per_item: float
    density: float
    sparsity: float
    item_gini: float
    user_gini: float
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_interactions,
            "interactions_per_user": self.interactions_per_user,
            "interactions_per_item": self.interactions_per_item,
            "density": self.density,
            "sparsity": self.sparsity,
            "item_gini": self.item_gini,
            "user_gini": self.user_gini,
        }
        out.update(self.extra)
        return out

    def to_csv(self, path=None) -> str:
        lines = ["key,value"] + [f"{k},{v!r}" if isinstance(v, float) else f"{k},{v}"
                                 for k, v in self.as_dict().items()]
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def dataset_stats(dataset: Dataset) -> StatsReport:
    """|U|, |I|, |R| and the derived ratios, density and Gini indices.

    Users and items are counted over the interaction log (entities with at
    least one interaction), not over the full catalog.
    """
    if not dataset.interactions:
        raise SamplingError("dataset_stats needs a non-empty dataset")
    users = dataset.user_counts()
    items = dataset.item_counts()
    n_u, n_i, n_r = len(users), len(items), len(dataset.interactions)
    density = n_r / (n_u * n_i)
    return StatsReport(
        n_users=n_u,
        n_items=n_i,
        n_interactions=n_r,
        interactions_per_user=n_r / n_u,
        interactions_per_item=n_r / n_i,
        density=density,
        sparsity=1.0 - density,
        item_gini=gini(list(items.values())),
        user_gini=gini(list(users.values())),
    )
