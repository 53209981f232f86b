import csv
from pathlib import Path

import pytest

from recllm_audit.dataset import Catalog, Dataset, Interaction, Item, parse_release_year

FIXTURES = Path(__file__).parent / "fixtures"


def make_dataset(rows, catalog=None, domain="movies"):
    """``rows`` are ``(user, item, rating, timestamp)`` tuples."""
    if catalog is None:
        ids = sorted({r[1] for r in rows})
        catalog = Catalog(Item(i, f"Item {i} (2000)", 2000, ("Drama",)) for i in ids)
    return Dataset(catalog, tuple(Interaction(*r) for r in rows), domain)


def load_parse_catalog(domain):
    base = FIXTURES / "parse"
    if domain == "movies":
        with open(base / "movies.csv", newline="", encoding="utf-8") as fh:
            return Catalog(Item(int(r["movieId"]), r["title"], parse_release_year(r["title"]),
                                tuple(r["genres"].split("|"))) for r in csv.DictReader(fh))
    with open(base / "tracks.csv", newline="", encoding="utf-8") as fh:
        return Catalog(Item(r["item_id"], r["track"], None, (), r["artist"]) for r in csv.DictReader(fh))


@pytest.fixture
def fixtures_dir():
    return FIXTURES
