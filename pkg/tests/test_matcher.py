import csv
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, load_parse_catalog
from oracles import ratcliff_obershelp as reference_ratio
from recllm_audit.dataset import Catalog, Item
from recllm_audit.errors import ConfigError
from recllm_audit.matcher import (
    DEFAULT_THRESHOLD, MatchIndex, ParsedCandidate, find_closest_match, normalize_title, parse_recommendations,
    parse_rules, resolve_list, similarity_ratio, title_variants,
)

PARSE = FIXTURES / "parse"


class TestRatio:
    def test_anchors(self):
        assert similarity_ratio("abcd", "abcd") == 1.0
        assert similarity_ratio("abcd", "xyzw") == 0.0
        assert similarity_ratio("abcd", "bcde") == 0.75
        assert similarity_ratio("", "") == 1.0
        assert similarity_ratio("", "abc") == 0.0

    def test_reference_on_random_pairs(self):
        rng = random.Random(20240601)
        for _ in range(1000):
            alphabet = rng.choice(["ab", "abc", "abcde", "abcdefghijklmnopqrstuvwxyz "])
            a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 14)))
            b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 14)))
            got = similarity_ratio(a, b)
            assert got == reference_ratio(a, b), (a, b)

    @given(st.text(max_size=30), st.text(max_size=30))
    def test_range_and_identity(self, a, b):
        assert 0.0 <= similarity_ratio(a, b) <= 1.0
        assert similarity_ratio(a, a) == 1.0


class TestNormalize:
    def test_article_and_year(self):
        assert normalize_title("Shawshank Redemption, The (1994)") == "the shawshank redemption"
        assert normalize_title("  The   Shawshank Redemption ") == "the shawshank redemption"

    def test_punctuation(self):
        assert normalize_title("Face/Off (1997)") == "faceoff"
        assert normalize_title("Rebellion (Lies)") == "rebellion (lies)"

    def test_alias_variants(self):
        assert title_variants("City of God (Cidade de Deus) (2002)") == (
            "city of god (cidade de deus)", "city of god", "cidade de deus")
        assert "se7en" in title_variants("Seven (a.k.a. Se7en) (1995)")
        assert title_variants("Moon (2009)") == ("moon",)


class TestParse:
    def test_numbered_quoted(self):
        cands = parse_rules('1. "Moon (2009)"\n2. "Inception (2010)"')
        assert [(c.title, c.rank) for c in cands] == [("Moon (2009)", 1), ("Inception (2010)", 2)]

    def test_prose_mention(self):
        cands = parse_rules("I suggest Bowfinger (1999) because it is funny.")
        assert [c.title for c in cands] == ["Bowfinger (1999)"]

    def test_music_by(self):
        cands = parse_rules("Hey Jude by The Beatles", "music")
        assert [(c.title, c.artist) for c in cands] == [("Hey Jude", "The Beatles")]

    def test_recommendation_prefix_and_markdown(self):
        cands = parse_rules("Recommendation 1: **Heat** (1995)\n* Fargo (1996) - snowy noir")
        assert [c.title for c in cands] == ["Heat", "Fargo (1996)"]

    def test_empty_parse(self):
        assert parse_rules("I'm sorry, I can't help with that.") == []

    def test_llm_assisted_uses_reply(self):
        seen = []

        def llm(messages):
            seen.append(messages)
            return '"Moon (2009)"\n"Heat (1995)"'

        cands = parse_recommendations("rambling text", "movies", "llm_assisted", llm)
        assert [c.title for c in cands] == ["Moon (2009)", "Heat (1995)"]
        assert seen[0][0]["role"] == "system" and seen[0][1]["content"] == "rambling text"

    def test_modes_validated(self):
        with pytest.raises(ConfigError):
            parse_recommendations("x", mode="regex")
        with pytest.raises(ConfigError):
            parse_recommendations("x", mode="llm_assisted")

    @given(st.text(max_size=300))
    def test_ranks_contiguous(self, text):
        cands = parse_rules(text)
        assert [c.rank for c in cands] == list(range(1, len(cands) + 1))


MOVIES = load_parse_catalog("movies")
MUSIC = load_parse_catalog("music")


def cand(title, artist=None):
    return ParsedCandidate(title, artist, title, 1)


class TestMatch:
    def test_exact(self):
        m = find_closest_match(cand("Inception (2010)"), MOVIES)
        assert (m.item_id, m.score, m.matched) == (3, 1.0, True)

    def test_article_reordering(self):
        m = find_closest_match(cand("The Shawshank Redemption"), MOVIES)
        assert m.item_id == 4 and m.score >= DEFAULT_THRESHOLD
        assert similarity_ratio(normalize_title("The Shawshank Redemption"),
                                normalize_title("Shawshank Redemption, The (1994)")) >= 0.6

    def test_gibberish(self):
        m = find_closest_match(cand("qwxz vbnm"), MOVIES)
        assert not m.matched and m.item_id is None and m.score < DEFAULT_THRESHOLD

    def test_music_combined_score(self):
        m = find_closest_match(cand("Creep", "Stone Temple Pilots"), MUSIC, domain="music")
        assert m.item_id == "m43" and m.score == 1.0
        half = find_closest_match(cand("Creep", "Zzzz"), MUSIC, domain="music")
        assert half.score == pytest.approx(0.5 + 0.5 * similarity_ratio("zzzz", "radiohead"))

    def test_ties_smallest_id(self):
        cat = Catalog([Item(5, "Twin"), Item(2, "Twin"), Item(9, "Twin")])
        assert find_closest_match(cand("Twin"), cat).item_id == 2

    def test_tie_prefers_stated_year(self):
        assert find_closest_match(cand("Solaris (1972)"), MOVIES).item_id == 73
        assert find_closest_match(cand("Solaris (2002)"), MOVIES).item_id == 72
        assert find_closest_match(cand("Solaris"), MOVIES).item_id == 72

    def test_brute_force_argmax(self):
        for title in ("Matrix", "Star Wars", "Blade Runer", "Aliens 2", "The Prestiges", "Monkeys 12"):
            t = normalize_title(title)
            scores = {iid: max(similarity_ratio(t, v) for v in title_variants(MOVIES[iid].title)) for iid in MOVIES}
            best = max(scores.values())
            m = find_closest_match(cand(title), MOVIES, threshold=0.0)
            assert m.score == best and scores[m.item_id] == best

    def test_invariant_matched_iff_threshold(self):
        for t in (0.0, 0.3, 0.6, 0.9, 1.0):
            m = find_closest_match(cand("Intersteller"), MOVIES, threshold=t)
            assert m.matched == (m.item_id is not None) == (m.score >= t)

    def test_bad_threshold_and_empty_catalog(self):
        with pytest.raises(ValueError):
            find_closest_match(cand("x"), MOVIES, threshold=1.5)
        with pytest.raises(ValueError):
            MatchIndex(Catalog([]))


class TestResolve:
    def test_exact_titles_in_order(self):
        ids = [10, 18, 47, 20, 19, 11, 16, 15, 17, 75]
        text = "\n".join(f'{n}. "{MOVIES[i].title}"' for n, i in enumerate(ids, start=1))
        assert list(resolve_list(text, MOVIES).item_ids) == ids

    def test_duplicates(self):
        rl = resolve_list('1. "Moon (2009)"\n2. "Heat (1995)"\n3. "Moon (2009)"', MOVIES)
        assert rl.item_ids == (11, 59) and len(rl.duplicates) == 1

    def test_unmatched_recorded(self):
        rl = resolve_list("1. Qwxz Vbnm (2031)\n2. Heat (1995)", MOVIES, user_id=3)
        assert rl.item_ids == (59,) and rl.user_id == 3
        assert len(rl.unmatched) == 1 and rl.unmatched[0].score < DEFAULT_THRESHOLD

    def test_deterministic(self):
        text = (PARSE / "movie_07_cot.txt").read_text(encoding="utf-8")
        assert resolve_list(text, MOVIES) == resolve_list(text, MOVIES)


def corpus():
    for txt in sorted(PARSE.glob("*.txt")):
        domain = "music" if txt.name.startswith("music") else "movies"
        with open(PARSE / f"{txt.stem}.labels.csv", newline="", encoding="utf-8") as fh:
            labels = list(csv.DictReader(fh))
        yield txt, domain, labels


def corpus_predictions(threshold):
    """``(expected, predicted)`` item-id strings for every labelled line."""
    out = []
    for txt, domain, labels in corpus():
        catalog = MUSIC if domain == "music" else MOVIES
        index = MatchIndex(catalog, domain)
        cands = parse_rules(txt.read_text(encoding="utf-8"), domain)
        for label in labels:
            at = [c for c in cands if c.line_no == int(label["line_no"])]
            predicted = None
            if at:
                m = find_closest_match(at[0], catalog, threshold, domain, index)
                predicted = "" if m.item_id is None else str(m.item_id)
            out.append((label["item_id"], predicted))
    return out


def corpus_accuracy(threshold=DEFAULT_THRESHOLD):
    pairs = corpus_predictions(threshold)
    return sum(e == p for e, p in pairs) / len(pairs), len(pairs)


class TestCorpus:
    def test_corpus_shape(self):
        items = list(corpus())
        assert len(items) >= 20
        assert {d for _t, d, _l in items} == {"movies", "music"}
        for txt, domain, labels in items:
            catalog = MUSIC if domain == "music" else MOVIES
            assert labels, txt.name
            assert all(label["item_id"] == "" or (int(label["item_id"]) if domain == "movies" else label["item_id"])
                       in catalog for label in labels)

    def test_resolution_accuracy(self):
        accuracy, n = corpus_accuracy()
        assert n >= 150 and accuracy >= 0.95

    def test_threshold_monotonic(self):
        counts = []
        for t in [x / 20 for x in range(21)]:
            counts.append(sum(1 for _e, p in corpus_predictions(t) if p))
        assert all(a >= b for a, b in zip(counts, counts[1:]))
