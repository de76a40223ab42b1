import math

import numpy as np
import pytest

from mergevit.errors import ConfigError, DimensionError, ParameterError
from mergevit.pruning import (ImportanceScores, SimilarityMetric, floor_chain, importance_scores, kept_count,
                              keep_rate_schedule, merge_tokens, prune, select_topk, similarity_matrix)
from mergevit.transformer import AttentionRecord


def scores_of(*values):
    return ImportanceScores(np.array(values, dtype=np.float32))


class TestImportanceScores:
    def test_single_head(self, rng):
        row = rng.dirichlet(np.ones(6)).astype(np.float32)
        out = importance_scores(AttentionRecord(row[None, :]))
        np.testing.assert_array_equal(out.scores, row)

    def test_two_mirrored_heads_average_to_uniform(self):
        n = 4
        r = np.array([0.1, 0.2, 0.3, 0.4], np.float32)
        mirrored = -r + 2 / n
        assert np.isclose(mirrored.sum(), 1) and (mirrored >= 0).all()
        out = importance_scores(AttentionRecord(np.stack([r, mirrored])))
        np.testing.assert_allclose(out.scores, np.full(n, 1 / n), atol=1e-7)

    def test_three_heads_elementwise_mean(self, rng):
        rows = rng.dirichlet(np.ones(9), size=3).astype(np.float32)
        out = importance_scores(AttentionRecord(rows))
        ref = [sum(float(rows[h, j]) for h in range(3)) / 3 for j in range(9)]
        np.testing.assert_allclose(out.scores, ref, atol=1e-6)


class TestSelectTopk:
    def test_keep_all(self):
        crucial, rest = select_topk(scores_of(0.2, 0.1, 0.3, 0.4), 1.0)
        assert crucial == [0, 1, 2, 3] and rest == []

    def test_half_of_four(self):
        # tokens 1..4 carry (0.1, 0.4, 0.2, 0.3)
        crucial, rest = select_topk(scores_of(0.0, 0.1, 0.4, 0.2, 0.3), 0.5)
        assert crucial == [0, 2, 4] and rest == [1, 3]

    def test_half_of_four_leading_high(self):
        crucial, rest = select_topk(scores_of(0.5, 0.4, 0.2, 0.3, 0.1), 0.5)
        assert crucial == [0, 1, 3] and rest == [2, 4]

    def test_ties_go_to_lower_index(self):
        crucial, rest = select_topk(scores_of(0.9, 0.25, 0.25, 0.25, 0.25), 0.5)
        assert crucial == [0, 1, 2] and rest == [3, 4]

    def test_cls_score_is_ignored(self):
        crucial, _ = select_topk(scores_of(0.0, 0.5, 0.5), 0.5)
        assert crucial == [0, 1]

    def test_at_least_one_kept(self):
        crucial, rest = select_topk(scores_of(0.1, 0.2, 0.3, 0.4), 0.01)
        assert crucial == [0, 3] and rest == [1, 2]

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.01, float("nan")])
    def test_bad_keep_rate(self, bad):
        with pytest.raises(ParameterError):
            select_topk(scores_of(0.1, 0.2, 0.3), bad)

    def test_needs_two_tokens(self):
        with pytest.raises(DimensionError):
            select_topk(scores_of(1.0), 0.5)


class TestKeptCount:
    def test_floor_chain_values(self):
        assert floor_chain(197, 0.7, 3) == [197, 138, 96, 67]
        assert floor_chain(197, 0.5, 3) == [197, 99, 50, 25]

    def test_decimal_products_do_not_round_down(self):
        # 0.29 * 100 is 28.999999999999996 in binary floating point
        assert kept_count(101, 0.29) == 30

    def test_minimum_one(self):
        assert kept_count(3, 0.1) == 2


def layout(*vectors):
    """CLS (zeros) followed by the given token vectors."""
    d = len(vectors[0])
    return np.array([[0.0] * d, *vectors], dtype=np.float32)


class TestSimilarity:
    def test_self_similarity(self):
        x = layout([0.3, -1.2, 2.0], [0.3, -1.2, 2.0])
        sim = similarity_matrix(x, [0, 1], [2], SimilarityMetric("cosine"))
        assert sim.shape == (1, 1) and abs(sim[0, 0] - 1.0) < 1e-6

    def test_orthogonal(self):
        x = layout([1.0, 0.0], [0.0, 1.0])
        assert similarity_matrix(x, [0, 1], [2], SimilarityMetric("cosine"))[0, 0] == 0.0

    def test_hand_values(self):
        x = layout([1.0, 1.0], [2.0, 2.0])
        assert abs(similarity_matrix(x, [0, 2], [1], SimilarityMetric("cosine"))[0, 0] - 1.0) < 1e-6
        assert abs(similarity_matrix(x, [0, 2], [1], SimilarityMetric("l2"))[0, 0] + math.sqrt(2)) < 1e-6
        assert abs(similarity_matrix(x, [0, 2], [1], SimilarityMetric("l1"))[0, 0] + 2.0) < 1e-6

    def test_zero_vector_is_finite(self):
        x = layout([0.0, 0.0], [1.0, 0.0])
        assert similarity_matrix(x, [0, 2], [1], SimilarityMetric("cosine"))[0, 0] == 0.0

    def test_attention_cross_reads_noncrucial_rows(self, rng):
        attn = rng.dirichlet(np.ones(4), size=(2, 4)).astype(np.float32)
        sim = similarity_matrix(np.zeros((4, 3), np.float32), [0, 1, 3], [2], SimilarityMetric("attention_cross"), attn)
        avg = attn.mean(axis=0)
        np.testing.assert_allclose(sim, [[avg[2, 1], avg[2, 3]]], atol=1e-7)

    def test_attention_cross_without_map(self):
        with pytest.raises(ConfigError):
            similarity_matrix(np.zeros((3, 2), np.float32), [0, 1], [2], SimilarityMetric("attention_cross"))

    def test_random_is_seeded(self, rng):
        x = rng.standard_normal((8, 4)).astype(np.float32)
        a = similarity_matrix(x, [0, 1, 2], [3, 4, 5, 6, 7], SimilarityMetric("random", 5))
        b = similarity_matrix(x, [0, 1, 2], [3, 4, 5, 6, 7], SimilarityMetric("random", 5))
        c = similarity_matrix(x, [0, 1, 2], [3, 4, 5, 6, 7], SimilarityMetric("random", 6))
        assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()

    def test_overlapping_lists(self):
        with pytest.raises(ParameterError):
            similarity_matrix(np.zeros((3, 2), np.float32), [0, 1], [1, 2], SimilarityMetric())

    def test_metric_names(self):
        assert SimilarityMetric.from_name("attn").kind == "attention_cross"
        with pytest.raises(ConfigError):
            SimilarityMetric.from_name("dot")


class TestMergeTokens:
    def test_empty_group_passes_through(self, rng):
        x = rng.standard_normal((4, 3)).astype(np.float32)
        s = scores_of(0.1, 0.5, 0.3, 0.1)
        sim = np.array([[0.9, 0.1]], np.float32)  # token 3 -> crucial 1
        out = merge_tokens(x, s, [0, 1, 2], [3], sim)
        assert np.array_equal(out.merged_tokens[0], x[0])
        assert np.array_equal(out.merged_tokens[2], x[2])
        assert out.merge_assignment == {3: 1}

    def test_identical_values(self):
        v = [0.25, -1.5]
        x = layout(v, v)
        out = merge_tokens(x, scores_of(0.0, 0.5, 0.5), [0, 1], [2], np.array([[1.0]], np.float32))
        np.testing.assert_allclose(out.merged_tokens[1], v, atol=1e-7)

    def test_weighted_mean_hand_value(self):
        x = layout([1.0, 0.0], [0.0, 1.0])
        out = merge_tokens(x, scores_of(0.2, 0.6, 0.2), [0, 1], [2], np.array([[0.3]], np.float32))
        np.testing.assert_allclose(out.merged_tokens[1], [0.75, 0.25], atol=1e-7)

    def test_similarity_tie_goes_to_lower_crucial_index(self, rng):
        x = rng.standard_normal((4, 2)).astype(np.float32)
        out = merge_tokens(x, scores_of(0.1, 0.3, 0.3, 0.3), [0, 1, 3], [2], np.array([[0.5, 0.5]], np.float32))
        assert out.merge_assignment == {2: 1}

    def test_cls_never_absorbs(self, rng):
        x = rng.standard_normal((6, 3)).astype(np.float32)
        x[2] = x[0]
        s = scores_of(0.5, 0.1, 0.1, 0.1, 0.1, 0.1)
        crucial, rest = select_topk(s, 0.25)
        out = merge_tokens(x, s, crucial, rest, similarity_matrix(x, crucial, rest, SimilarityMetric()))
        assert 0 not in out.merge_assignment.values()
        assert np.array_equal(out.merged_tokens[0], x[0])

    def test_zero_scores_stay_finite(self, rng):
        x = rng.standard_normal((3, 2)).astype(np.float32)
        out = merge_tokens(x, scores_of(0.0, 0.0, 0.0), [0, 1], [2], np.array([[1.0]], np.float32))
        np.testing.assert_allclose(out.merged_tokens[1], (x[1] + x[2]) / 2, atol=1e-6)

    def test_provenance(self, rng):
        x = rng.standard_normal((5, 2)).astype(np.float32)
        s = scores_of(0.0, 0.4, 0.3, 0.2, 0.1)
        sim = np.array([[0.0, 1.0], [1.0, 0.0]], np.float32)  # 3 -> 2, 4 -> 1
        out = merge_tokens(x, s, [0, 1, 2], [3, 4], sim)
        assert out.group_provenance == [frozenset(), {0, 3}, {1, 2}]
        assert out.merge_groups == {0: [], 1: [4], 2: [3]}

    def test_shape_check(self, rng):
        with pytest.raises(DimensionError):
            merge_tokens(np.zeros((4, 2), np.float32), scores_of(0, 0, 0, 0), [0, 1], [2, 3], np.zeros((1, 1), np.float32))


class TestPrune:
    def test_counts_and_partition(self, rng):
        x = rng.standard_normal((21, 6)).astype(np.float32)
        rec = AttentionRecord(rng.dirichlet(np.ones(21), size=3).astype(np.float32))
        out = prune(x, rec, 0.4, SimilarityMetric())
        assert out.merged_tokens.shape == (9, 6)
        assert sorted(i for g in out.group_provenance for i in g) == list(range(20))


class TestSchedule:
    def test_endpoints(self):
        assert keep_rate_schedule(0.7, 0, 30) == 1.0
        assert abs(keep_rate_schedule(0.7, 30, 30) - 0.7) < 1e-12
        assert keep_rate_schedule(0.7, 100, 30) == keep_rate_schedule(0.7, 30, 30)

    def test_midpoint(self):
        assert abs(keep_rate_schedule(0.7, 15, 30) - 0.85) < 1e-12

    def test_monotone(self):
        values = [keep_rate_schedule(0.5, t, 40) for t in range(45)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_bad_args(self):
        with pytest.raises(ParameterError):
            keep_rate_schedule(1.2, 0, 10)
        with pytest.raises(ParameterError):
            keep_rate_schedule(0.5, 0, 0)
