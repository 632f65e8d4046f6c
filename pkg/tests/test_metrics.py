import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rjm.metrics import (
    adjusted_rand,
    coef_rmse_standardized,
    contingency_table,
    inclusion_frequencies,
    selection_auc,
)


def ari_by_hand(a, b):
    """Direct evaluation of the pair-counting formula."""
    a, b = np.asarray(a), np.asarray(b)
    n = len(a)
    ct = contingency_table(a, b)
    c2 = lambda x: x * (x - 1) / 2.0
    sum_ij = sum(c2(v) for v in ct.ravel())
    sum_a = sum(c2(v) for v in ct.sum(axis=1))
    sum_b = sum(c2(v) for v in ct.sum(axis=0))
    e = sum_a * sum_b / c2(n)
    return (sum_ij - e) / (0.5 * (sum_a + sum_b) - e)


class TestAdjustedRand:
    def test_identical_partitions(self):
        labels = [1, 1, 2, 2, 3]
        assert adjusted_rand(labels, labels) == 1.0

    def test_constant_vs_two_cluster_is_zero(self):
        assert adjusted_rand([1, 1, 2, 2], [5, 5, 5, 5]) == pytest.approx(0.0)

    def test_hand_computed_case(self):
        # (1,1,2,2) vs (1,2,1,2): contingency [[1,1],[1,1]]
        # sum_ij C(n_ij,2)=0, a=b=[2,2] -> sums 2; E = 2*2/6 = 2/3
        # ARI = (0 - 2/3)/(2 - 2/3) = -0.5
        assert adjusted_rand([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(-0.5)
        assert ari_by_hand([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(-0.5)

    def test_against_hand_formula_random(self, rng):
        for _ in range(20):
            a = rng.integers(0, 3, 30)
            b = rng.integers(0, 4, 30)
            assert adjusted_rand(a, b) == pytest.approx(ari_by_hand(a, b), abs=1e-12)

    def test_sklearn_cross_check(self, rng):
        sk = pytest.importorskip("sklearn.metrics")
        for _ in range(10):
            a = rng.integers(0, 3, 40)
            b = rng.integers(0, 3, 40)
            assert adjusted_rand(a, b) == pytest.approx(
                sk.adjusted_rand_score(a, b), abs=1e-12)

    def test_symmetry_and_relabeling(self, rng):
        a = rng.integers(0, 3, 25)
        b = rng.integers(0, 2, 25)
        assert adjusted_rand(a, b) == pytest.approx(adjusted_rand(b, a))
        remap = {0: 7, 1: 3, 2: 11}
        a2 = np.array([remap[v] for v in a])
        assert adjusted_rand(a, b) == pytest.approx(adjusted_rand(a2, b))

    def test_both_trivial_degenerate(self):
        assert adjusted_rand([1, 1, 1], [2, 2, 2]) == 1.0
        assert adjusted_rand([1, 2], [1, 1]) == 0.0

    def test_too_short(self):
        with pytest.raises(ValueError):
            adjusted_rand([1], [1])


class TestSelectionAuc:
    def test_perfect_separation(self):
        support = np.array([True, True, False, False])
        scores = np.array([5.0, -4.0, 0.1, -0.2])
        assert selection_auc(support, scores) == 1.0

    def test_all_ties_half(self):
        support = np.array([True, False, True, False])
        assert selection_auc(support, np.ones(4)) == 0.5

    def test_pair_count_oracle(self, rng):
        for _ in range(20):
            support = rng.random(12) < 0.4
            if not support.any() or support.all():
                continue
            scores = np.round(rng.standard_normal(12), 1)  # force some ties
            s = np.abs(scores)
            total = 0.0
            for i, j in itertools.product(np.flatnonzero(support),
                                          np.flatnonzero(~support)):
                total += 1.0 if s[i] > s[j] else 0.5 if s[i] == s[j] else 0.0
            oracle = total / (support.sum() * (~support).sum())
            assert selection_auc(support, scores) == pytest.approx(oracle, abs=1e-12)

    @given(st.floats(0.1, 10), st.floats(0.01, 5))
    @settings(max_examples=50, deadline=None)
    def test_monotone_transform_invariance(self, a, b):
        support = np.array([True, False, True, False, False])
        scores = np.array([2.0, 1.0, 0.5, 3.0, 0.1])
        transformed = a * np.abs(scores) ** b  # strictly monotone in |score|
        assert selection_auc(support, scores) == selection_auc(support, transformed)

    def test_degenerate_support_rejected(self):
        with pytest.raises(ValueError):
            selection_auc(np.array([True, True]), np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            selection_auc(np.array([False, False]), np.array([1.0, 2.0]))


class TestCoefRmse:
    def test_exact_match_zero(self):
        b = np.array([1.0, -2.0, 0.0])
        assert coef_rmse_standardized(b, b, np.ones(3)) == 0.0

    def test_unit_sd_plain_rmse(self):
        bh = np.array([1.0, 0.0])
        bt = np.array([0.0, 0.0])
        assert coef_rmse_standardized(bh, bt, np.ones(2)) == pytest.approx(np.sqrt(0.5))

    def test_independent_recomputation(self, rng):
        bh = rng.standard_normal(6)
        bt = rng.standard_normal(6)
        sd = rng.random(6) + 0.5
        acc = 0.0
        for j in reversed(range(6)):
            acc += ((bh[j] - bt[j]) * sd[j]) ** 2
        assert coef_rmse_standardized(bh, bt, sd) == pytest.approx(np.sqrt(acc / 6), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            coef_rmse_standardized(np.ones(2), np.ones(3), np.ones(3))


class TestInclusionFrequencies:
    def test_all_zero_fits(self):
        out = inclusion_frequencies([np.zeros(4), np.zeros(4)])
        assert np.all(out == 0.0)

    def test_single_run(self):
        assert inclusion_frequencies([np.array([1.0, 0.0])]).tolist() == [1.0, 0.0]

    def test_manual_count(self):
        runs = [np.array([1.0, 0.0, 1e-12]),
                np.array([0.5, 0.2, 0.0]),
                np.array([0.0, -0.3, 2.0])]
        out = inclusion_frequencies(runs, threshold=1e-8)
        assert out.tolist() == [2 / 3, 2 / 3, 1 / 3]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            inclusion_frequencies([])
