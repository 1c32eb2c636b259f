"""Impression-level ranking metrics, macro-averaged over impressions.

Each metric returns ``None`` when it is undefined for an impression (AUC
needs both classes, MRR and nDCG need a positive); :func:`aggregate` counts
those exclusions.  Ranking ties are broken by original candidate order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError

METRICS = ("auc", "mrr", "ndcg@5", "ndcg@10")


def _arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    return s, y


def auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with ties counted as one half."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _ranking(s: np.ndarray) -> np.ndarray:
    return np.argsort(-s, kind="stable")


def mrr(scores, labels) -> float | None:
    """Mean over positives of ``1 / rank``."""
    s, y = _arrays(scores, labels)
    if y.sum() == 0:
        return None
    ranked = y[_ranking(s)]
    return float(np.mean(1.0 / (np.flatnonzero(ranked) + 1)))


def ndcg_at_k(scores, labels, k: int) -> float | None:
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    ranked = y[_ranking(s)][:k]
    dcg = float((ranked * discounts[: len(ranked)]).sum())
    ideal = float(discounts[: min(k, n_pos)].sum())
    return dcg / ideal


def has_positive_tie(scores, labels) -> bool:
    """True when some positive shares its score with some negative."""
    s, y = _arrays(scores, labels)
    return bool(np.intersect1d(s[y == 1], s[y == 0]).size)


@dataclass
class ScoredImpression:
    impression_id: str
    candidates: Sequence[str]
    scores: np.ndarray
    labels: np.ndarray


@dataclass
class MetricReport:
    values: dict[str, float]
    counts: dict[str, int]
    excluded: dict[str, int]
    impressions: int
    tied_impressions: int = 0
    extra: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def to_text(self) -> str:
        lines = [f"{'metric':<10}{'value':>10}{'used':>8}{'excluded':>10}"]
        for m in METRICS:
            lines.append(f"{m:<10}{self.values[m]:>10.6f}{self.counts[m]:>8d}{self.excluded[m]:>10d}")
        lines.append(f"impressions {self.impressions}; with positive/negative score ties {self.tied_impressions}")
        return "\n".join(lines)

    def to_kv(self) -> str:
        lines = [f"{m}={self.values[m]:.10f}" for m in METRICS]
        lines += [f"excluded_{m}={self.excluded[m]}" for m in METRICS]
        lines += [f"impressions={self.impressions}", f"tied_impressions={self.tied_impressions}"]
        return "\n".join(lines)

    @classmethod
    def from_kv(cls, text: str) -> "MetricReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        values = {m: float(kv[m]) for m in METRICS}
        excluded = {m: int(kv[f"excluded_{m}"]) for m in METRICS}
        n = int(kv["impressions"])
        counts = {m: n - excluded[m] for m in METRICS}
        return cls(values, counts, excluded, n, int(kv.get("tied_impressions", 0)))


def aggregate(impressions: Iterable[ScoredImpression]) -> MetricReport:
    """Macro-average each metric over the impressions where it is defined."""
    per: dict[str, list[float]] = {m: [] for m in METRICS}
    excluded = {m: 0 for m in METRICS}
    n = ties = 0
    for imp in impressions:
        n += 1
        vals = {
            "auc": auc(imp.scores, imp.labels),
            "mrr": mrr(imp.scores, imp.labels),
            "ndcg@5": ndcg_at_k(imp.scores, imp.labels, 5),
            "ndcg@10": ndcg_at_k(imp.scores, imp.labels, 10),
        }
        for m, v in vals.items():
            if v is None:
                excluded[m] += 1
            else:
                per[m].append(v)
        ties += has_positive_tie(imp.scores, imp.labels)
    if n == 0:
        raise ConfigError("evaluation set is empty")
    values = {m: (float(np.mean(v)) if v else math.nan) for m, v in per.items()}
    counts = {m: len(v) for m, v in per.items()}
    return MetricReport(values, counts, excluded, n, ties)


def score_impressions(model, samples, news) -> list[ScoredImpression]:
    needed = dict.fromkeys(nid for s in samples for nid in (*s.history, *s.candidates))
    matrix, index = model.news_matrix(news, needed)
    return [
        ScoredImpression(
            s.impression_id, s.candidates, model.score_impression(s, news, matrix, index), np.asarray(s.labels)
        )
        for s in samples
    ]


def evaluate(model, samples, news) -> MetricReport:
    """Score every impression in inference mode and aggregate."""
    if not samples:
        raise ConfigError("evaluation set is empty")
    return aggregate(score_impressions(model, samples, news))
