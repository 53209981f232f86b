import math

import pytest
from hypothesis import given, settings, strategies as st

from recllm_audit.dataset import Interaction, chrono_split
from recllm_audit.errors import SamplingError
from recllm_audit.profile import (
    age_group, build_profile, play_count_scores, render_demographic, sample_context, take_examples,
)
from recllm_audit.synthetic import movielens_like


def history(ratings, user=1):
    """One interaction per rating, item ids 1.., timestamps 10, 20, ..."""
    return [Interaction(user, i + 1, r, 10.0 * (i + 1)) for i, r in enumerate(ratings)]


def ids(entries):
    return [e.item_id for e in entries]


class TestSampleContext:
    def test_exactly_n_items(self):
        h = history([3, 5, 1, 4, 2])
        for strategy in ("frequent", "recency_frequent"):
            assert sorted(ids(sample_context(h, strategy, 5).entries)) == [1, 2, 3, 4, 5]

    def test_frequent_ties_by_recency(self):
        h = history([5, 4, 5, 2])
        assert ids(sample_context(h, "frequent", 3).entries) == [3, 1, 2]

    def test_recency_prefers_newer_on_equal_rating(self):
        h = history([4, 4])
        assert ids(sample_context(h, "recency_frequent", 2).entries) == [2, 1]

    def test_recency_matches_explicit_scoring(self):
        ratings = [5, 1, 4.5, 3, 2, 5, 3.5, 1, 4, 2.5]
        h = history(ratings)
        lo, hi = min(ratings), max(ratings)
        n = len(ratings)
        # item i+1 has age rank n-1-i (newest item has rank 0)
        scored = [((r - lo) / (hi - lo) * math.exp(-0.1 * (n - 1 - i)), i + 1) for i, r in enumerate(ratings)]
        expected = [iid for _s, iid in sorted(scored, key=lambda t: (-t[0], -t[1]))][:5]
        assert ids(sample_context(h, "recency_frequent", 5, decay=0.1).entries) == expected

    def test_zero_decay_equals_frequent(self):
        h = history([2, 5, 3.5, 1, 4.5, 3])
        assert ids(sample_context(h, "recency_frequent", 4, decay=0.0).entries) == \
            ids(sample_context(h, "frequent", 4).entries)

    def test_empty_history(self):
        with pytest.raises(SamplingError):
            sample_context([], "frequent", 5)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.sampled_from([0.5, 1, 2, 3, 3.5, 4, 5]), min_size=1, max_size=20), st.integers(1, 8))
    def test_size_and_membership(self, ratings, n):
        h = history(ratings)
        for strategy in ("frequent", "recency_frequent"):
            entries = sample_context(h, strategy, n).entries
            assert len(entries) == min(n, len(h))
            assert set(ids(entries)) <= {x.item_id for x in h}


class TestTakeExamples:
    def test_index_arithmetic(self):
        h = history([1, 2, 3, 4, 5, 4, 3])   # items a..g = 1..7
        block = take_examples(h, 5, 1)
        assert ids(block.recent_inputs) == [2, 3, 4, 5, 6] and ids(block.demonstrations) == [7]

    def test_zero_shot(self):
        block = take_examples(history([1, 2, 3, 4, 5, 4, 3]), 5, 0)
        assert ids(block.recent_inputs) == [3, 4, 5, 6, 7] and block.demonstrations == ()

    def test_icl2_newest_two_in_order(self):
        block = take_examples(history([1, 2, 3, 4, 5, 4, 3, 2]), 5, 2)
        assert ids(block.demonstrations) == [7, 8]
        assert max(e.timestamp for e in block.recent_inputs) < min(e.timestamp for e in block.demonstrations)

    def test_unsorted_input(self):
        h = list(reversed(history([1, 2, 3, 4, 5, 4, 3])))
        assert ids(take_examples(h, 5, 1).demonstrations) == [7]

    def test_shortfall_is_named(self):
        with pytest.raises(SamplingError, match="short by 2"):
            take_examples(history([1, 2, 3, 4, 5]), 5, 2)

    def test_music_values_are_scores(self):
        h = [Interaction(1, "a", None, 1), Interaction(1, "a", None, 2), Interaction(1, "b", None, 3)]
        block = take_examples(h, 1, 1)
        assert [e.value for e in block.recent_inputs + block.demonstrations] == [5, 1]


class TestPlayCounts:
    def test_min_max_to_1_5(self):
        h = [Interaction(1, i, None, t) for t, i in enumerate(["a"] * 5 + ["b"] * 3 + ["c"])]
        assert play_count_scores(h) == {"a": 5, "b": 3, "c": 1}

    def test_all_equal(self):
        assert play_count_scores([Interaction(1, "a", None, 0), Interaction(1, "b", None, 1)]) == {"a": 5, "b": 5}


class TestBuildProfile:
    def test_disjoint_blocks_for_icl(self):
        h = history([5, 5, 5, 1, 2, 3, 4, 4, 4, 2])
        context, examples = build_profile(h, "frequent", 5, n_recent=5, n_demos=2)
        window = set(ids(examples.recent_inputs + examples.demonstrations))
        assert not window & set(ids(context.entries))

    def test_no_test_leakage(self):
        ds = movielens_like(n_users=10, seed=4)
        split = chrono_split(ds, (0.8, 0.1, 0.1))
        train, test = split.train.by_user(), split.test.by_user()
        for user, hist in train.items():
            for demos in (0, 1, 2):
                context, examples = build_profile(hist, "recency_frequent", 5, 5, demos)
                used = set(ids(context.entries + examples.recent_inputs + examples.demonstrations))
                assert not used & {x.item_id for x in test.get(user, [])}

    def test_deterministic(self):
        h = history([3, 1, 4, 1, 5, 2, 6, 5, 3, 5])
        assert build_profile(h, n_demos=1) == build_profile(h, n_demos=1)


class TestDemographic:
    def test_none(self):
        assert render_demographic("none").rendered_text == ""

    def test_gender(self):
        assert render_demographic("gender", {"gender": "F"}).rendered_text == "is female, and "
        assert render_demographic("gender", {"gender": "male"}).rendered_text == "is male, and "

    def test_age_group(self):
        assert render_demographic("age_group", {"age_group": "young"}).rendered_text == "is young, and "
        assert render_demographic("age_group", {"age": 45, "median_age": 25}).rendered_text == "is old, and "

    def test_median_boundary_is_old(self):
        assert age_group(25, 25) == "old" and age_group(18, 25) == "young"

    def test_missing_metadata(self):
        with pytest.raises(SamplingError):
            render_demographic("gender", {})
        with pytest.raises(SamplingError):
            render_demographic("age_group", {"age": 30})
