"""Seeded synthetic datasets for tests, demos and offline runs.

All generators return a :class:`~recllm_audit.dataset.Dataset` in the movie
domain with distinct titles carrying a trailing ``(YYYY)``, so they flow
through prompt rendering, the mock provider and the title matcher exactly
like MovieLens data. :func:`write_movielens` puts one on disk in the
``movielens_csv`` layout.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataset import Catalog, Dataset, Interaction, Item

GENRES = ("Action", "Adventure", "Animation", "Children", "Comedy", "Crime", "Documentary",
          "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance",
          "Sci-Fi", "Thriller", "War", "Western")
_ADJECTIVES = ("Silent", "Crimson", "Hidden", "Broken", "Golden", "Last", "Midnight", "Lost",
               "Electric", "Frozen", "Velvet", "Savage", "Distant", "Iron", "Paper", "Wild")
_NOUNS = ("River", "Empire", "Garden", "Signal", "Harbor", "Mirror", "Frontier", "Orchard",
          "Engine", "Letter", "Kingdom", "Tide", "Window", "Circus", "Lantern", "Voyage")

_EPOCH = 946_684_800  # 2000-01-01T00:00:00Z
_DAY = 86_400


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def synthetic_title(index: int) -> str:
    """A readable, unique title for item ``index``."""
    adj = _ADJECTIVES[index % len(_ADJECTIVES)]
    noun = _NOUNS[(index // len(_ADJECTIVES)) % len(_NOUNS)]
    cycle = index // (len(_ADJECTIVES) * len(_NOUNS))
    return f"{adj} {noun}" + (f" {cycle + 1}" if cycle else "")


def make_catalog(years, rng: np.random.Generator, genres_per_item=(1, 3)) -> Catalog:
    items = []
    for i, year in enumerate(years):
        n_genres = int(rng.integers(genres_per_item[0], genres_per_item[1] + 1))
        picked = sorted(rng.choice(len(GENRES), size=n_genres, replace=False))
        items.append(Item(i + 1, f"{synthetic_title(i)} ({int(year)})", int(year),
                          tuple(GENRES[g] for g in picked)))
    return Catalog(items)


def _draw_log(rng, user_items: dict) -> tuple:
    """Interactions with distinct per-user timestamps and half-star ratings."""
    out = []
    for user, items in user_items.items():
        days = np.sort(rng.choice(3650, size=len(items), replace=False))
        ratings = rng.integers(1, 11, size=len(items)) / 2
        for item, day, rating in zip(items, days, ratings):
            out.append(Interaction(user, int(item), float(rating), float(_EPOCH + day * _DAY)))
    return tuple(out)


def movielens_like(n_users: int = 20, n_items: int = 200, per_user=(30, 60), seed: int = 0,
                   zipf: float = 0.8) -> Dataset:
    """General-purpose rating log with mildly skewed item popularity."""
    rng = _rng(seed)
    catalog = make_catalog(rng.integers(1930, 2021, size=n_items), rng)
    weights = 1.0 / np.arange(1, n_items + 1) ** zipf
    weights = rng.permutation(weights)
    weights /= weights.sum()
    user_items = {}
    for u in range(1, n_users + 1):
        size = int(rng.integers(per_user[0], per_user[1] + 1))
        user_items[u] = rng.choice(n_items, size=min(size, n_items), replace=False, p=weights) + 1
    return Dataset(catalog, _draw_log(rng, user_items), "movies")


def separable(n_users: int = 200, n_items: int = 100, n_blocks: int = 2, per_user: int = 20,
              seed: int = 0, zipf: float = 1.0) -> Dataset:
    """Users split into ``n_blocks`` communities, each consuming only its own item block.

    Within a block item popularity follows a Zipf law, so block-aware models
    have signal beyond global popularity. User ``u`` belongs to block
    ``(u - 1) % n_blocks``; item ``i`` to block ``(i - 1) * n_blocks // n_items``.
    """
    rng = _rng(seed)
    catalog = make_catalog(rng.integers(1930, 2021, size=n_items), rng)
    bounds = [b * n_items // n_blocks for b in range(n_blocks + 1)]
    user_items = {}
    for u in range(1, n_users + 1):
        b = (u - 1) % n_blocks
        lo, hi = bounds[b], bounds[b + 1]
        w = 1.0 / np.arange(1, hi - lo + 1) ** zipf
        user_items[u] = rng.choice(np.arange(lo, hi), size=min(per_user, hi - lo), replace=False,
                                   p=w / w.sum()) + 1
    return Dataset(catalog, _draw_log(rng, user_items), "movies")


def block_of_item(item_id: int, n_items: int, n_blocks: int) -> int:
    return (item_id - 1) * n_blocks // n_items


def popularity_skewed(n_users: int = 100, n_items: int = 300, per_user: int = 30, seed: int = 0,
                      n_popular: int = 20, popular_years=(1993, 1997), zipf: float = 1.2) -> Dataset:
    """Heavy-head log whose most consumed items all date from ``popular_years``.

    The ``n_popular`` head items get release years drawn from the given
    range; the tail is dated uniformly over 1930-2020.
    """
    rng = _rng(seed)
    years = np.concatenate([
        rng.integers(popular_years[0], popular_years[1] + 1, size=n_popular),
        rng.integers(1930, 2021, size=n_items - n_popular),
    ])
    catalog = make_catalog(years, rng)
    weights = 1.0 / np.arange(1, n_items + 1) ** zipf
    weights /= weights.sum()
    user_items = {
        u: rng.choice(n_items, size=min(per_user, n_items), replace=False, p=weights) + 1
        for u in range(1, n_users + 1)
    }
    return Dataset(catalog, _draw_log(rng, user_items), "movies")


def user_metadata(user_ids, seed: int = 0) -> dict:
    """Random gender and MovieLens-1M style age codes for each user."""
    rng = _rng(seed)
    codes = (1, 18, 25, 35, 45, 50, 56)
    return {
        u: {"gender": "F" if rng.random() < 0.5 else "M", "age": float(codes[int(rng.integers(len(codes)))])}
        for u in sorted(user_ids)
    }


GENERATORS = {"movielens_like": movielens_like, "separable": separable,
              "popularity_skewed": popularity_skewed}


def generate(kind: str, **kwargs) -> Dataset:
    if kind not in GENERATORS:
        raise ValueError(f"unknown synthetic dataset {kind!r}; expected one of {sorted(GENERATORS)}")
    return GENERATORS[kind](**kwargs)


def write_movielens(dataset: Dataset, directory) -> Path:
    """Write ``ratings.csv`` and ``movies.csv``; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "movies.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["movieId", "title", "genres"])
        for iid in dataset.catalog.sorted_ids():
            item = dataset.catalog[iid]
            w.writerow([iid, item.title, "|".join(item.genres) or "(no genres listed)"])
    with open(directory / "ratings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["userId", "movieId", "rating", "timestamp"])
        for x in sorted(dataset.interactions, key=lambda x: (x.user_id, x.timestamp, x.item_id)):
            w.writerow([x.user_id, x.item_id, f"{x.rating:g}", int(x.timestamp)])
    return directory


def write_users(metadata: dict, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["userId", "gender", "age"])
        for u in sorted(metadata):
            age = metadata[u].get("age")
            w.writerow([u, metadata[u].get("gender", ""), "" if age is None else f"{age:g}"])
    return path
