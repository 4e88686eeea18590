import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from choppy.metrics import (
    dcg_vector,
    f1_vector,
    metric_vector,
    oracle_cutoff,
    precision_vector,
    relevance_to_label,
)

from oracles import brute_dcg, brute_f1, brute_precision, random_labels

labels_st = st.lists(st.sampled_from([1, -1]), min_size=1, max_size=60)


class TestDCG:
    def test_single(self):
        assert dcg_vector([1]).tolist() == [1.0]

    def test_worked_example(self):
        np.testing.assert_allclose(dcg_vector([1, -1, 1]), [1.0, 0.36907, 0.86907], atol=1e-4)

    def test_all_negative_strictly_decreasing(self):
        c = dcg_vector([-1] * 20)
        assert np.all(np.diff(c) < 0)

    @given(labels_st)
    def test_increments(self, y):
        c = dcg_vector(y)
        prev = np.concatenate([[0.0], c[:-1]])
        k = np.arange(1, len(y) + 1)
        np.testing.assert_allclose(c - prev, np.array(y) / np.log2(k + 1), rtol=0, atol=1e-12)

    @given(labels_st)
    def test_append_moves_final_value(self, y):
        base = dcg_vector(y)[-1]
        assert dcg_vector(y + [1])[-1] > base
        assert dcg_vector(y + [-1])[-1] < base

    @given(labels_st)
    def test_bounds(self, y):
        c = dcg_vector(y)
        bound = np.cumsum(1.0 / np.log2(np.arange(2, len(y) + 2)))
        assert np.all(np.abs(c) <= bound + 1e-12)

    def test_against_brute_force(self, rng):
        for y in random_labels(rng, 200):
            np.testing.assert_allclose(dcg_vector(y), brute_dcg(y), rtol=0, atol=1e-9)


class TestF1:
    def test_worked_example(self):
        np.testing.assert_allclose(f1_vector([1, 1, -1, -1]), [2 / 3, 1.0, 0.8, 2 / 3], atol=1e-4)

    @pytest.mark.parametrize("m", [1, 2, 7, 30])
    def test_all_relevant_closed_form(self, m):
        k = np.arange(1, m + 1)
        np.testing.assert_allclose(f1_vector([1] * m), 2 * k / (k + m), rtol=1e-15)

    def test_all_irrelevant(self):
        assert f1_vector([-1] * 9).tolist() == [0.0] * 9

    def test_external_total(self):
        # 2 relevant in the list out of 4 overall
        c = f1_vector([1, -1, 1], relevant_total=4)
        expected = [float(v) for v in brute_f1([1, -1, 1], total=4)]
        np.testing.assert_allclose(c, expected, rtol=1e-15)

    def test_external_total_too_small(self):
        with pytest.raises(ValueError):
            f1_vector([1, 1, 1], relevant_total=2)

    def test_against_brute_force(self, rng):
        for y in random_labels(rng, 200):
            expected = np.array([float(v) for v in brute_f1(y)])
            np.testing.assert_array_equal(f1_vector(y), expected)

    @given(labels_st)
    def test_range(self, y):
        c = f1_vector(y)
        assert np.all((c >= 0) & (c <= 1))

    @given(st.integers(1, 40), st.integers(0, 40))
    def test_perfect_prefix_peaks_at_R(self, r, tail):
        c = f1_vector([1] * r + [-1] * tail)
        assert c[r - 1] == pytest.approx(1.0)
        assert c[r - 1] == c.max()


class TestPrecision:
    def test_examples(self):
        assert precision_vector([1, -1]).tolist() == [1.0, 0.5]
        assert precision_vector([-1, 1]).tolist() == [0.0, 0.5]

    def test_against_brute_force(self, rng):
        for y in random_labels(rng, 200):
            expected = np.array([float(v) for v in brute_precision(y)])
            np.testing.assert_array_equal(precision_vector(y), expected)

    @given(labels_st)
    def test_range(self, y):
        c = precision_vector(y)
        assert np.all((c >= 0) & (c <= 1))


class TestOracleCutoff:
    def test_tie_takes_earliest(self):
        assert oracle_cutoff([0.2, 0.9, 0.9]) == (2, 0.9)

    def test_increasing(self):
        assert oracle_cutoff([0.1, 0.2, 0.3, 0.4])[0] == 4

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=50))
    def test_matches_scan_and_dominates(self, c):
        best_k, best_v = 1, c[0]
        for i, v in enumerate(c):
            if v > best_v:
                best_k, best_v = i + 1, v
        k, value = oracle_cutoff(c)
        assert (k, value) == (best_k, best_v)
        assert all(value >= v for v in c)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            oracle_cutoff([])


class TestValidation:
    @pytest.mark.parametrize("fn", [dcg_vector, f1_vector, precision_vector])
    def test_empty_rejected(self, fn):
        with pytest.raises(ValueError):
            fn([])

    @pytest.mark.parametrize("fn", [dcg_vector, f1_vector, precision_vector])
    def test_bad_label_rejected(self, fn):
        with pytest.raises(ValueError):
            fn([1, 0, -1])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            metric_vector([1], "ndcg")

    @pytest.mark.parametrize("level,label", [(0, -1), (1, 1), (2, 1), (-1, -1)])
    def test_graded_levels(self, level, label):
        assert relevance_to_label(level) == label
