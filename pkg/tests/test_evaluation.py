import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cnesue.errors import ConfigError
from cnesue.evaluation import (
    METRICS,
    MetricReport,
    ScoredImpression,
    aggregate,
    auc,
    has_positive_tie,
    mrr,
    ndcg_at_k,
)


def pair_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def stable_order(scores):
    """Selection-sort re-rank: highest score first, earlier index wins ties."""
    left = list(range(len(scores)))
    order = []
    while left:
        best = left[0]
        for i in left[1:]:
            if scores[i] > scores[best]:
                best = i
        order.append(best)
        left.remove(best)
    return order


def rerank_mrr(scores, labels):
    order = stable_order(scores)
    ranks = [order.index(i) + 1 for i, l in enumerate(labels) if l]
    return sum(1.0 / r for r in ranks) / len(ranks)


def exhaustive_ndcg(scores, labels, k):
    order = stable_order(scores)
    dcg = sum(labels[j] / math.log2(i + 2) for i, j in enumerate(order[:k]))
    ideal = max(
        sum(labels[j] / math.log2(i + 2) for i, j in enumerate(perm[:k]))
        for perm in itertools.permutations(range(len(labels)))
    )
    return dcg / ideal


class TestExamples:
    def test_auc(self):
        assert auc([0.9, 0.1], [1, 0]) == 1.0
        assert auc([0.3] * 5, [0, 0, 1, 0, 0]) == 0.5

    def test_mrr(self):
        assert mrr([0.9, 0.1, 0.2], [1, 0, 0]) == 1.0
        assert mrr([0.8, 0.9, 0.1, 0.2, 0.3], [1, 0, 0, 0, 0]) == 0.5

    def test_ndcg(self):
        assert ndcg_at_k([3, 2, 1, 0, -1], [1, 0, 0, 0, 0], 5) == 1.0
        assert ndcg_at_k([3, 2, 1, 0, -1], [0, 0, 1, 0, 0], 5) == pytest.approx(0.5)
        assert ndcg_at_k([3, 2, 1, 0, -1, -2], [0, 0, 0, 0, 0, 1], 5) == 0.0

    def test_undefined_cases(self):
        assert auc([1, 2], [1, 1]) is None
        assert auc([1, 2], [0, 0]) is None
        assert mrr([1, 2], [0, 0]) is None
        assert ndcg_at_k([1, 2], [0, 0], 5) is None

    def test_shape_check(self):
        with pytest.raises(ValueError):
            auc([1, 2, 3], [1, 0])

    def test_ties_break_by_input_order(self):
        assert mrr([1.0, 1.0], [0, 1]) == 0.5
        assert mrr([1.0, 1.0], [1, 0]) == 1.0
        assert has_positive_tie([1.0, 1.0, 0.0], [0, 1, 0])
        assert not has_positive_tie([2.0, 1.0, 1.0], [1, 0, 0])


class TestOracles:
    def test_random_impressions(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            labels = rng.integers(0, 2, size=n)
            scores = np.round(rng.normal(size=n), 1)  # coarse values give ties
            s, y = scores.tolist(), labels.tolist()
            if 0 < sum(y) < n:
                assert abs(auc(s, y) - pair_auc(s, y)) <= 1e-9
            if sum(y):
                assert abs(mrr(s, y) - rerank_mrr(s, y)) <= 1e-9
                for k in (5, 10):
                    assert abs(ndcg_at_k(s, y, k) - exhaustive_ndcg(s, y, k)) <= 1e-9

    @given(st.lists(st.tuples(st.integers(-20, 20), st.integers(0, 1)), min_size=2, max_size=8))
    @settings(max_examples=100, deadline=None)
    def test_monotone_transform_invariance(self, pairs):
        # Quarter-step scores keep the transform strictly monotone in floating point.
        s = np.array([p[0] / 4 for p in pairs])
        y = [p[1] for p in pairs]
        t = np.exp(s) * 3 + 1
        for f in (auc, mrr, lambda a, b: ndcg_at_k(a, b, 5)):
            a, b = f(s, y), f(t, y)
            assert (a is None and b is None) or abs(a - b) < 1e-12

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=8, unique=True), st.data())
    @settings(max_examples=100, deadline=None)
    def test_label_inversion(self, scores, data):
        y = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
        if 0 < sum(y) < len(y):
            assert auc(scores, y) + auc(scores, [1 - v for v in y]) == pytest.approx(1.0)


class TestAggregate:
    def test_macro_average(self):
        imps = [
            ScoredImpression("1", ("a", "b"), np.array([0.9, 0.1]), np.array([1, 0])),
            ScoredImpression("2", ("a", "b"), np.array([0.5, 0.5]), np.array([1, 0])),
        ]
        rep = aggregate(imps)
        assert rep["auc"] == 0.75 and rep.impressions == 2 and rep.tied_impressions == 1

    def test_exclusions_counted(self):
        imps = [
            ScoredImpression("1", ("a", "b"), np.array([0.9, 0.1]), np.array([1, 0])),
            ScoredImpression("2", ("a", "b"), np.array([0.5, 0.2]), np.array([1, 1])),
            ScoredImpression("3", ("a",), np.array([0.5]), np.array([0])),
        ]
        rep = aggregate(imps)
        assert rep.excluded == {"auc": 2, "mrr": 1, "ndcg@5": 1, "ndcg@10": 1}
        assert rep.counts["auc"] == 1 and rep["mrr"] == pytest.approx((1.0 + 0.75) / 2)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            aggregate([])

    def test_report_formats(self):
        rep = aggregate([ScoredImpression("1", ("a", "b", "c"), np.array([0.2, 0.9, 0.1]), np.array([1, 0, 0]))])
        text = rep.to_text()
        for m in METRICS:
            assert m in text
        assert "excluded" in text
        back = MetricReport.from_kv(rep.to_kv())
        for m in METRICS:
            assert back[m] == pytest.approx(rep[m], abs=1e-10)
        assert back.excluded == rep.excluded
