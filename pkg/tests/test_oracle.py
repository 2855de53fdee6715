import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegrid.attention import BlockSelection, HeadTensors, attention_probs
from sparsegrid.oracle import (
    GroundTruth,
    ground_truth_sets,
    predicted_key_set,
    score_selection,
    sorted_prefix,
)


def random_head(L, d, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return HeadTensors(*(rng.standard_normal((L, d)) * scale for _ in range(3)))


# Hand fixture, L = 16, B = 4. Precision/recall were worked out by hand with
# exact fractions: precision 1303/3360, recall 27/32, F1 35181/66208.
HAND_BLOCKS = np.array([
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [1, 0, 1, 0],
    [1, 0, 0, 1],
], dtype=bool)
HAND_SETS = (
    [0], [0, 1], [1], [0, 3],
    [0], [5], [4, 6], [0, 7],
    [0, 8], [9], [5, 10], [0],
    [0, 12], [13], [0, 1, 14], [8, 15],
)
HAND_PRECISION = 0.38779761904761906
HAND_RECALL = 0.84375
HAND_F1 = 0.531370831319478


class TestSortedPrefix:
    def test_threshold_reached_by_two(self):
        assert sorted_prefix([0.6, 0.3, 0.1], 0.9).tolist() == [0, 1]

    def test_threshold_needs_all(self):
        assert sorted_prefix([0.6, 0.3, 0.1], 0.95).tolist() == [0, 1, 2]

    def test_ties_to_smaller_index(self):
        assert sorted_prefix([0.25, 0.25, 0.25, 0.25], 0.5).tolist() == [0, 1]

    def test_full_mass_skips_trailing_zeros(self):
        assert sorted_prefix([0.0, 0.7, 0.3, 0.0], 1.0).tolist() == [1, 2]

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40), st.floats(0.01, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_minimal_and_sufficient(self, values, tau):
        values = np.asarray(values)
        if values.sum() == 0:
            values[0] = 1.0
        keep = sorted_prefix(values, tau)
        order = np.argsort(-values, kind="stable")
        running = np.cumsum(values[order])
        target = tau * running[-1]
        assert running[keep.size - 1] >= target
        assert keep.size == 1 or running[keep.size - 2] < target


class TestGroundTruth:
    def test_tiny_example(self):
        # a single query whose causal probabilities are [0.6, 0.3, 0.1]
        p = np.log([0.6, 0.3, 0.1])
        q = np.zeros((3, 1))
        q[2] = 1.0
        k = p[:, None].copy()
        t = HeadTensors(q, k, np.zeros((3, 1)))
        np.testing.assert_allclose(attention_probs(t)[2], [0.6, 0.3, 0.1], rtol=1e-6)
        assert ground_truth_sets(t, 0.9).key_sets[2].tolist() == [0, 1]
        assert ground_truth_sets(t, 0.95).key_sets[2].tolist() == [0, 1, 2]

    def test_sets_are_causal_and_nonempty(self):
        truth = ground_truth_sets(random_head(64, 8, 0), 0.9)
        for i, keys in enumerate(truth.key_sets):
            assert 0 < len(keys) <= i + 1 and keys.max() <= i

    def test_first_query(self):
        truth = ground_truth_sets(random_head(8, 4, 1))
        assert truth.key_sets[0].tolist() == [0]

    def test_mass_oracle(self):
        t = random_head(40, 8, 2, scale=2.0)
        probs = attention_probs(t).astype(np.float64)
        truth = ground_truth_sets(t, 0.8)
        for i, keys in enumerate(truth.key_sets):
            row = probs[i, :i + 1]
            assert row[keys].sum() >= 0.8 * row.sum() - 1e-12
            # dropping the smallest kept entry falls below the threshold
            if len(keys) > 1:
                smallest = keys[np.argmin(row[keys])]
                assert row[keys].sum() - row[smallest] < 0.8 * row.sum()

    def test_block_truth(self):
        truth = GroundTruth(HAND_SETS, 0.95).with_blocks(4)
        assert truth.block_truth.tolist() == [
            [True, False, False, False],
            [True, True, False, False],
            [True, True, True, False],
            [True, False, True, True],
        ]

    @pytest.mark.parametrize("tau", [0.0, -0.1, 1.01])
    def test_invalid_tau(self, tau):
        with pytest.raises(ValueError):
            ground_truth_sets(random_head(4, 2, 3), tau)


class TestPredictedKeySet:
    def test_capped_at_query(self):
        sel = BlockSelection(HAND_BLOCKS, 4, 16)
        assert predicted_key_set(sel, 5).tolist() == [4, 5]
        assert predicted_key_set(sel, 9).tolist() == [0, 1, 2, 3, 8, 9]
        assert predicted_key_set(sel, 15).tolist() == [0, 1, 2, 3, 12, 13, 14, 15]

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            predicted_key_set(BlockSelection(HAND_BLOCKS, 4, 16), 16)


class TestScoreSelection:
    def test_hand_fixture(self):
        rep = score_selection(BlockSelection(HAND_BLOCKS, 4, 16), GroundTruth(HAND_SETS, 0.95))
        assert rep.precision == pytest.approx(HAND_PRECISION, abs=1e-12)
        assert rep.recall == pytest.approx(HAND_RECALL, abs=1e-12)
        assert rep.f1 == pytest.approx(HAND_F1, abs=1e-12)
        assert rep.per_query_recall[14] == 1.0
        assert rep.per_query_recall[15] == 0.5

    def test_all_causal_has_full_recall(self):
        t = random_head(96, 8, 4)
        rep = score_selection(BlockSelection.all_causal(96, 16), ground_truth_sets(t, 0.9))
        assert rep.recall == 1.0

    def test_stride_one_full_mass_is_perfect(self):
        # B = 1 all-causal against tau* = 1: every key with nonzero mass is predicted
        t = random_head(24, 4, 5)
        truth = ground_truth_sets(t, 1.0)
        rep = score_selection(BlockSelection.all_causal(24, 1), truth)
        assert rep.recall == 1.0
        assert all(len(k) == i + 1 for i, k in enumerate(truth.key_sets))
        assert rep.precision == 1.0

    def test_recall_monotone_in_selection(self):
        rng = np.random.default_rng(6)
        t = random_head(128, 8, 6, scale=1.5)
        truth = ground_truth_sets(t, 0.9)
        nb = 8
        blocks = np.eye(nb, dtype=bool)
        last = score_selection(BlockSelection(blocks, 16, 128), truth).recall
        for _ in range(10):
            blocks = blocks | np.tril(rng.random((nb, nb)) < 0.15)
            rec = score_selection(BlockSelection(blocks, 16, 128), truth).recall
            assert rec >= last
            last = rec

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            score_selection(BlockSelection.all_causal(8, 4), GroundTruth(HAND_SETS, 0.9))

    def test_block_size_mismatch(self):
        truth = GroundTruth(HAND_SETS, 0.9).with_blocks(2)
        with pytest.raises(ValueError):
            score_selection(BlockSelection(HAND_BLOCKS, 4, 16), truth)
