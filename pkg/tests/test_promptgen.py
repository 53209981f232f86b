import itertools

import pytest
from hypothesis import given, strategies as st

from conftest import FIXTURES
from recllm_audit.dataset import Catalog, Item, parse_release_year
from recllm_audit.errors import ConfigError
from recllm_audit.profile import ContextProfile, DemographicClause, ExampleBlock, ProfileEntry
from recllm_audit.promptgen import (
    EMPHASES, FAIRNESS_PREFIX, ROLE_MESSAGES, ROLES, SCENARIOS, build_sequential_prompt, build_topk_prompt,
    fixture_name, render_fixture, render_movies_string, scenario_template,
)

PROMPTS = FIXTURES / "prompts"
R1 = "Given a user, act as recommender system."
R2 = ("Act as a fair recommender system balancing between popular and less-known movies "
      "to ensure provider fairness.")


def item(iid, title, genres):
    return Item(iid, title, parse_release_year(title), tuple(genres.split("|")))


TOPK_CATALOG = Catalog([item(1, "The Matrix", "Action|Sci-Fi"), item(2, "Inception", "Action|Thriller")])
TOPK_PROFILE = ContextProfile(7, (ProfileEntry(1, 5.0, 2.0), ProfileEntry(2, 4.5, 1.0)), "frequent")

SEQ_CATALOG = Catalog([
    item(1, "From Russia with Love (1963)", "Action"),
    item(2, "Star Trek IV: The Voyage Home (1986)", "Action|Adventure|Sci-Fi"),
    item(3, "Planet of the Apes (1968)", "Action|Sci-Fi"),
    item(4, "Star Wars: Episode I - The Phantom Menace (1999)", "Action|Adventure|Fantasy|Sci-Fi"),
    item(5, "Final Conflict, The (a.k.a. Omen III: The Final Conflict) (1981)", "Horror"),
    item(6, "Strange Days (1995)", "Action|Crime|Sci-Fi"),
    item(7, "Face/Off (1997)", "Action|Sci-Fi|Thriller"),
    item(8, "Bringing Out the Dead (1999)", "Drama|Horror"),
    item(9, "Sixth Sense, The (1999)", "Thriller"),
    item(10, "Austin Powers: The Spy Who Shagged Me (1999)", "Comedy"),
    item(11, "Arlington Road (1999)", "Thriller"),
    item(12, "Bowfinger (1999)", "Comedy"),
])
RATINGS = {1: 5, 3: 3, 4: 4, 5: 3, 6: 3, 7: 4, 8: 5, 9: 5, 10: 4, 11: 4, 12: 3}


def entries(ids, overrides=None):
    values = {**RATINGS, **(overrides or {})}
    return tuple(ProfileEntry(i, values[i], float(n)) for n, i in enumerate(ids))


def sequential_inputs(n_demos):
    star_trek = 4 if n_demos == 0 else 3
    context = ContextProfile(7, entries([1, 2, 3, 4, 5], {2: star_trek}), "frequent")
    if n_demos == 0:
        return context, ExampleBlock((), ())
    if n_demos == 1:
        return context, ExampleBlock(entries([7, 8, 9, 10, 11]), entries([12]))
    return context, ExampleBlock(entries([6, 7, 8, 9, 10]), entries([12, 11]))


DEMOGRAPHICS = {"none": DemographicClause(), "gender": DemographicClause("gender", "is female, and "),
                "age_group": DemographicClause("age_group", "is young, and ")}
TOPK_CELLS = [(s, r, e, False) for s, r, e in itertools.product(SCENARIOS, ROLES, EMPHASES)]
TOPK_CELLS += [("S3", r, e, True) for r, e in itertools.product(ROLES, EMPHASES)]


@pytest.mark.parametrize("scenario,role,emphasis,explicit", TOPK_CELLS)
def test_topk_golden_file(scenario, role, emphasis, explicit):
    bundle = build_topk_prompt(TOPK_PROFILE, TOPK_CATALOG, scenario, role, emphasis, explicit)
    expected = (PROMPTS / fixture_name(bundle.provenance)).read_bytes()
    assert render_fixture(bundle).encode("utf-8") == expected


@pytest.mark.parametrize("n_demos,demographic", list(itertools.product((0, 1, 2), DEMOGRAPHICS)))
def test_sequential_golden_file(n_demos, demographic):
    context, examples = sequential_inputs(n_demos)
    bundle = build_sequential_prompt(context, examples, DEMOGRAPHICS[demographic], SEQ_CATALOG)
    expected = (PROMPTS / fixture_name(bundle.provenance)).read_bytes()
    assert render_fixture(bundle).encode("utf-8") == expected


def test_every_fixture_is_exercised():
    names = {fixture_name(build_topk_prompt(TOPK_PROFILE, TOPK_CATALOG, *cell).provenance) for cell in TOPK_CELLS}
    for n_demos, demographic in itertools.product((0, 1, 2), DEMOGRAPHICS):
        context, examples = sequential_inputs(n_demos)
        names.add(fixture_name(build_sequential_prompt(context, examples, DEMOGRAPHICS[demographic],
                                                       SEQ_CATALOG).provenance))
    assert names == {p.name for p in PROMPTS.glob("*.txt")}


class TestMoviesString:
    def test_implicit(self):
        assert render_movies_string([(TOPK_CATALOG[1], 5)]) == "The Matrix (Genres: Action|Sci-Fi)"

    def test_explicit(self):
        assert render_movies_string([(TOPK_CATALOG[1], 5)], explicit=True) == \
            "The Matrix (Genres: Action/Sci-Fi, Rating: 5/5)"

    def test_no_genres(self):
        bare = Item(3, "Untitled", None, ())
        assert render_movies_string([(bare, 4)]) == "Untitled"
        assert render_movies_string([(bare, 4)], explicit=True) == "Untitled (Rating: 4/5)"

    def test_empty(self):
        with pytest.raises(ValueError):
            render_movies_string([])


class TestTopk:
    def test_s1_exact(self):
        b = build_topk_prompt(TOPK_PROFILE, TOPK_CATALOG, "S1")
        assert b.system_message is None
        assert b.user_message == ("Based on these movies: The Matrix (Genres: Action|Sci-Fi), Inception "
                                  "(Genres: Action|Thriller), recommend 10 movies that the user will likely enjoy.")

    def test_role_strings(self):
        assert ROLE_MESSAGES == {"R0": None, "R1": R1, "R2": R2}

    def test_explicit_only_with_s3(self):
        with pytest.raises(ConfigError):
            build_topk_prompt(TOPK_PROFILE, TOPK_CATALOG, "S1", explicit=True)

    def test_k_substitution(self):
        assert "recommend 5 movies" in scenario_template("S1", 5)
        assert "{user_movies_string}" in scenario_template("S4")

    @given(st.sampled_from(SCENARIOS), st.sampled_from(ROLES), st.sampled_from(EMPHASES))
    def test_structural_invariants(self, scenario, role, emphasis):
        b = build_topk_prompt(TOPK_PROFILE, TOPK_CATALOG, scenario, role, emphasis)
        rendered = render_movies_string([(TOPK_CATALOG[1], 5), (TOPK_CATALOG[2], 4.5)])
        assert b.user_message.count(rendered) == 1
        assert (b.system_message is None) == (role == "R0")
        assert b.user_message.startswith(FAIRNESS_PREFIX) == (emphasis == "E1")
        assert b.user_message.count(FAIRNESS_PREFIX) == (emphasis == "E1")
        assert [m["role"] for m in b.messages()] == (["user"] if role == "R0" else ["system", "user"])


class TestSequential:
    def test_closing_questions(self):
        zero = build_sequential_prompt(*sequential_inputs(0), None, SEQ_CATALOG)
        assert zero.user_message.endswith("What would be the top-1 suitable next recommendation?")
        icl = build_sequential_prompt(*sequential_inputs(1), None, SEQ_CATALOG)
        assert icl.user_message.count("Recommendation 1: ") == 1 and "Recommendation 2" not in icl.user_message
        assert icl.user_message.endswith("next recommendation after the above movies?")

    def test_music_wording(self):
        cat = Catalog([Item("t1", "Creep", None, (), "Radiohead")])
        context = ContextProfile("u", (ProfileEntry("t1", 5, 0.0),), "frequent")
        b = build_sequential_prompt(context, ExampleBlock((), ()), None, cat, domain="music")
        assert b.user_message.startswith("The user has listened to the following songs:")
        assert '- "Creep by Radiohead" with rating 5' in b.user_message
        assert "music preferences" in b.user_message

    def test_empty_context(self):
        with pytest.raises(ValueError):
            build_sequential_prompt(ContextProfile(1, (), "frequent"), ExampleBlock((), ()), None, SEQ_CATALOG)
