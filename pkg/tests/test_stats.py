import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from neuromatch.stats import StatsError, mm_accuracy, significant, wilcoxon_rank_sum, wilcoxon_signed_rank
from neuromatch.trainer import PredictionRecord


class TestAccuracy:
    def test_half(self):
        assert mm_accuracy([(0.9, 0.1), (0.4, 0.6)]) == 50.0

    def test_all_correct(self):
        assert mm_accuracy([PredictionRecord("a", 0.5, 0.7, 0.2)] * 3) == 100.0

    def test_tie_is_error(self):
        assert mm_accuracy([(0.5, 0.5)]) == 0.0

    def test_empty(self):
        with pytest.raises(StatsError):
            mm_accuracy([])


class TestSignedRank:
    def test_three_diffs(self):
        assert wilcoxon_signed_rank([1, 2, 3], [0, 0, 0]) == (6.0, 0.25)

    def test_antisymmetric(self):
        a, b = [0.3, 1.2, 0.1, 0.9, 2.0], [0.1, 0.2, 0.4, 0.3, 0.5]
        assert wilcoxon_signed_rank(a, b)[1] == wilcoxon_signed_rank(b, a)[1]

    def test_too_few(self):
        with pytest.raises(StatsError):
            wilcoxon_signed_rank([1, -1], [0, 0])
        with pytest.raises(StatsError):
            wilcoxon_signed_rank([1, 1, 1], [1, 1, 1])

    def test_matches_scipy_exact(self):
        rng = np.random.default_rng(0)
        for n in range(3, 13):
            a, b = rng.normal(size=n), rng.normal(size=n) + 0.4
            assert wilcoxon_signed_rank(a, b)[1] == pytest.approx(sps.wilcoxon(a, b, method="exact").pvalue)

    def test_normal_approximation_matches_scipy(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=40), rng.normal(size=40) + 0.3
        ref = sps.wilcoxon(a, b, correction=True, method="approx")
        w, p = wilcoxon_signed_rank(a, b)
        assert p == pytest.approx(ref.pvalue, rel=1e-9)

    @given(st.lists(st.integers(-5, 5), min_size=3, max_size=10))
    def test_p_in_unit_interval(self, diffs):
        if sum(d != 0 for d in diffs) < 3:
            return
        w, p = wilcoxon_signed_rank(diffs, [0] * len(diffs))
        assert 0 < p <= 1


class TestRankSum:
    def test_small(self):
        u, p = wilcoxon_rank_sum([1, 2], [3, 4])
        assert u == 0 and p == pytest.approx(1 / 3)

    def test_identical(self):
        assert wilcoxon_rank_sum([1, 2, 3], [1, 2, 3])[1] == pytest.approx(1.0)

    def test_label_swap(self):
        a, b = [0.1, 0.5, 0.7], [0.2, 0.9, 1.4, 2.0]
        assert wilcoxon_rank_sum(a, b)[1] == wilcoxon_rank_sum(b, a)[1]

    def test_empty(self):
        with pytest.raises(StatsError):
            wilcoxon_rank_sum([], [1])

    def test_matches_scipy(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=6), rng.normal(size=5) + 1
        assert wilcoxon_rank_sum(a, b)[1] == pytest.approx(sps.mannwhitneyu(a, b, method="exact").pvalue)
        a, b = rng.normal(size=25), rng.normal(size=30) + 0.5
        assert wilcoxon_rank_sum(a, b)[1] == pytest.approx(sps.mannwhitneyu(a, b, method="asymptotic").pvalue)


def test_significance_flag():
    assert significant(0.009) and not significant(0.01) and not significant(float("nan"))
