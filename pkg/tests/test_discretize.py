import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ochoice.discretize import assign_categories, category_summary, jenks_breaks
from ochoice.errors import DataError
from ochoice.synth import brute_force_jenks


class TestJenks:
    def test_two_clusters(self):
        b = jenks_breaks([1, 2, 10, 11], 2)
        assert b.thresholds == (2.0,)
        assert b.category_counts == (2, 2)
        assert b.objective == pytest.approx(1.0)

    def test_outlier(self):
        assert jenks_breaks([1, 2, 3, 100], 2).thresholds == (3.0,)

    def test_single_class(self):
        b = jenks_breaks([5, 5, 5], 1)
        assert b.thresholds == () and b.category_counts == (3,)

    def test_too_few_distinct(self):
        with pytest.raises(DataError):
            jenks_breaks([1, 1, 2], 3)

    def test_order_does_not_matter(self):
        rng = np.random.default_rng(5)
        v = rng.exponential(size=60)
        a, b = jenks_breaks(v, 4), jenks_breaks(rng.permutation(v), 4)
        assert a.thresholds == b.thresholds
        assert a.objective == b.objective

    def test_ties_take_smallest_thresholds(self):
        # (1,2,3) with K = 2: {1},{2,3} and {1,2},{3} both cost 0.5
        assert jenks_breaks([1, 2, 3], 2).thresholds == (1.0,)

    def test_shares_sum_to_one(self):
        b = jenks_breaks(np.random.default_rng(1).normal(size=500), 5)
        assert sum(b.category_counts) == 500
        assert abs(sum(b.category_shares) - 1.0) < 1e-12
        assert all(np.diff(b.thresholds) > 0)

    @given(st.lists(st.integers(0, 20), min_size=2, max_size=12), st.integers(2, 4))
    @settings(max_examples=150, deadline=None)
    def test_matches_brute_force(self, values, K):
        values = np.array(values, dtype=float) / 4.0
        if np.unique(values).size < K:
            return
        fast, slow = jenks_breaks(values, K), brute_force_jenks(values, K)
        assert fast.thresholds == slow.thresholds
        assert fast.objective == pytest.approx(slow.objective, rel=1e-9, abs=1e-12)


class TestAssign:
    def test_wait_time_cuts(self):
        np.testing.assert_array_equal(assign_categories([3, 5, 5.1, 20, 33], [5, 20]),
                                      [1, 1, 2, 2, 3])

    def test_distance_cuts(self):
        assert assign_categories([10], [7.8, 15.3, 26, 41.4])[0] == 2

    def test_empty(self):
        assert assign_categories([], [1.0]).size == 0

    def test_non_increasing_thresholds(self):
        with pytest.raises(DataError):
            assign_categories([1.0], [2.0, 2.0])


class TestSummary:
    def test_counts(self):
        b = category_summary([1, 1, 2, 3], [5, 20])
        assert b.category_shares == (0.5, 0.25, 0.25)

    def test_all_first(self):
        b = category_summary([1, 1, 1], [5, 20])
        assert b.category_shares == (1.0, 0.0, 0.0)

    def test_rows(self):
        rows = jenks_breaks([1, 2, 10, 11], 2).summary_rows()
        assert [r["count"] for r in rows] == [2, 2]
        assert rows[0]["upper"] == rows[1]["lower"] == 2.0
