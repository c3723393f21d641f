"""Token Top-K selection and FFN2 masking against brute-force oracles."""

import math

import numpy as np
import pytest

from reference import column_mask, topk_keep_indices
from vitaccel.pruning import (
    ClassAttentionScores,
    PruningError,
    class_attention,
    ffn2_accumulate_and_mask,
    top_k_count,
    topk_select,
)


def scores_of(values, layer=0):
    return ClassAttentionScores(scores=np.asarray(values, dtype=np.float64), source_layer=layer)


class TestClassAttention:
    def test_single_head_drops_cls_entry(self):
        out = class_attention(np.array([[0.5, 0.3, 0.2]]))
        np.testing.assert_allclose(out.scores, [0.3, 0.2])

    def test_two_head_average(self):
        out = class_attention(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
        np.testing.assert_allclose(out.scores, [0.5, 0.5])

    def test_random_rows_match_column_mean_oracle(self):
        r = np.random.default_rng(9)
        raw = r.uniform(0.01, 1.0, (6, 10))
        probs = raw / raw.sum(axis=1, keepdims=True)
        out = class_attention(probs, num_heads=6)
        expected = [probs[:, j].mean() for j in range(1, 10)]
        np.testing.assert_allclose(out.scores, expected, atol=1e-15)

    def test_head_count_mismatch(self):
        probs = np.full((2, 4), 0.25)
        with pytest.raises(PruningError):
            class_attention(probs, num_heads=6)

    def test_rejects_non_softmax_rows(self):
        with pytest.raises(PruningError):
            class_attention(np.array([[0.5, 0.2, 0.2]]))  # sums to 0.9

    def test_scores_sum_bound(self):
        # score mass excludes the class entry, so it stays at or below 1
        r = np.random.default_rng(3)
        raw = r.uniform(0, 1, (4, 12))
        probs = raw / raw.sum(axis=1, keepdims=True)
        out = class_attention(probs)
        assert out.scores.sum() <= 1.0 + 1e-9


class TestTopK:
    def test_k_formula_deit_chain(self):
        assert top_k_count(197, 0.5) == 98
        assert top_k_count(99, 0.5) == 49
        assert top_k_count(50, 0.5) == 25

    def test_n197_keeps_99(self):
        r = np.random.default_rng(0)
        raw = r.uniform(0, 1, 196)
        s = scores_of(raw / raw.sum() * 0.9)
        keep = topk_select(s, 0.5, 197)
        assert keep.k == 98
        assert len(keep.kept_indices) == 99
        assert keep.kept_indices[0] == 0

    def test_keep_ratio_one_is_identity(self):
        for n in (2, 5, 17):
            s = scores_of(np.linspace(0.9, 0.1, n - 1) / n)
            keep = topk_select(s, 1.0, n)
            assert keep.kept_indices.tolist() == list(range(n))

    def test_tie_breaks_to_lower_index(self):
        # K = ceil(3 * 2/3) = 2; the 0.2 tie resolves to the earlier token
        keep = topk_select(scores_of([0.2, 0.2, 0.1]), 2.0 / 3.0, 4)
        assert keep.k == 2
        assert keep.kept_indices.tolist() == [0, 1, 2]

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force_oracle(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(3, 40))
        raw = r.uniform(0, 1, n - 1)
        vals = raw / raw.sum() * 0.95
        # inject ties to exercise the stable rule
        if n > 6:
            vals[3] = vals[1]
        rho = float(r.choice([0.25, 0.5, 0.75, 1.0]))
        keep = topk_select(scores_of(vals), rho, n)
        assert keep.kept_indices.tolist() == topk_keep_indices(vals, rho, n)

    def test_rescaling_invariance(self):
        r = np.random.default_rng(5)
        raw = r.uniform(0, 1, 30)
        vals = raw / raw.sum() * 0.9
        base = topk_select(scores_of(vals), 0.4, 31).kept_indices.tolist()
        for c in (0.1, 0.5, 0.999):
            scaled = topk_select(scores_of(vals * c), 0.4, 31).kept_indices.tolist()
            assert scaled == base

    def test_class_token_always_kept(self):
        # even when every score beats any class-token consideration
        keep = topk_select(scores_of([0.5, 0.4]), 0.5, 3)
        assert 0 in keep.kept_indices.tolist()

    def test_score_length_validation(self):
        with pytest.raises(PruningError):
            topk_select(scores_of([0.1, 0.2]), 0.5, 4)


class TestFfn2Mask:
    def test_all_zero_threshold_zero_gives_all_false(self):
        mask = ffn2_accumulate_and_mask(np.zeros((3, 8)), 0.0)
        assert not mask.mask.any()  # strict: 0 > 0 is false

    def test_single_token_example(self):
        mask = ffn2_accumulate_and_mask(np.array([[2.0, 0.1]]), 1.5)
        assert mask.mask.tolist() == [True, False]

    def test_random_matches_column_sum_oracle(self):
        r = np.random.default_rng(17)
        acts = r.uniform(0, 0.02, (26, 1536))
        mask = ffn2_accumulate_and_mask(acts, 1.0)
        np.testing.assert_array_equal(mask.mask, column_mask(acts, 1.0))
        np.testing.assert_allclose(mask.accumulated, acts.sum(axis=0))

    def test_monotone_in_threshold(self):
        r = np.random.default_rng(23)
        acts = r.uniform(0, 1, (10, 64))
        prev = None
        for theta in (0.0, 1.0, 2.0, 5.0, 50.0):
            kept = set(np.flatnonzero(ffn2_accumulate_and_mask(acts, theta).mask))
            if prev is not None:
                assert kept <= prev
            prev = kept

    def test_negative_entries_rejected(self):
        with pytest.raises(PruningError):
            ffn2_accumulate_and_mask(np.array([[0.1, -0.2]]), 0.0)

    def test_negative_threshold_rejected(self):
        with pytest.raises(PruningError):
            ffn2_accumulate_and_mask(np.zeros((1, 2)), -1.0)
