"""Structural user encoding over a category cluster graph.

Browsed news become nodes; news sharing a category form a clique.  Each
category cluster gets a zero-initialised proxy node linked to its members,
and proxies are fully linked to each other.  A residual GCN runs over this
graph, then the candidate news vector queries first within each cluster and
then across clusters.

Parameter names under ``sue.``::

    gcn.{l}.w          [d, d]      l = 0 .. L-1   (absent without GCN)
    intra.{wq,wk}      [d, A]
    cluster.{w,b}      [d, d], [d]
    inter.{wq,wk}      [d, A]
    flat.{wq,wk}       [d, A]      (only in the flat-attention variant)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .tensor import (
    ModelParams,
    Tensor,
    add,
    concat,
    dropout,
    expand,
    linear,
    matmul,
    relu,
    reshape,
    scale,
    softmax_masked,
    transpose,
)


@dataclass(frozen=True)
class SueFlags:
    gcn: bool = True
    hierarchical: bool = True


@dataclass
class ClusterGraph:
    """Hierarchical cluster graph; nodes are news (history order) then proxies."""

    categories: tuple[str, ...]
    cluster_labels: tuple[str, ...]
    clusters: tuple[tuple[int, ...], ...]
    adjacency: np.ndarray
    normalized: np.ndarray

    @property
    def n_news(self) -> int:
        return len(self.categories)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_labels)

    @property
    def n_nodes(self) -> int:
        return self.n_news + self.n_clusters

    def membership(self) -> np.ndarray:
        """Boolean ``[C, n_news]``; row ``i`` marks members of cluster ``i``."""
        m = np.zeros((self.n_clusters, self.n_news), dtype=bool)
        for i, members in enumerate(self.clusters):
            m[i, list(members)] = True
        return m

    def edges(self) -> list[tuple[int, int]]:
        iu = np.argwhere(np.triu(self.adjacency, k=1) > 0)
        return [(int(a), int(b)) for a, b in iu]

    def edge_counts(self) -> dict[str, int]:
        n = self.n_news
        counts = {"news-news": 0, "proxy-news": 0, "proxy-proxy": 0}
        for a, b in self.edges():
            if b < n:
                counts["news-news"] += 1
            elif a < n:
                counts["proxy-news"] += 1
            else:
                counts["proxy-proxy"] += 1
        return counts

    def dump(self, news_ids: Sequence[str] | None = None) -> str:
        lines = [f"nodes {self.n_nodes} news {self.n_news} clusters {self.n_clusters}"]
        for i, cat in enumerate(self.categories):
            name = news_ids[i] if news_ids is not None else str(i)
            lines.append(f"node\t{i}\tnews\t{name}\t{cat}")
        for j, cat in enumerate(self.cluster_labels):
            lines.append(f"node\t{self.n_news + j}\tproxy\t-\t{cat}")
        for a, b in self.edges():
            lines.append(f"edge\t{a}\t{b}")
        return "\n".join(lines)


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``."""
    a = np.asarray(adj, dtype=np.float64)
    a_tilde = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def build_cluster_graph(categories: Sequence[str]) -> ClusterGraph:
    """Build the graph for a history given each browsed article's category."""
    categories = tuple(categories)
    n = len(categories)
    if n == 0:
        raise ConfigError("cannot build a cluster graph from an empty history")
    labels: list[str] = []
    members: dict[str, list[int]] = {}
    for i, cat in enumerate(categories):
        if cat not in members:
            members[cat] = []
            labels.append(cat)
        members[cat].append(i)
    C = len(labels)
    adj = np.zeros((n + C, n + C), dtype=np.float64)
    for j, cat in enumerate(labels):
        idx = members[cat]
        adj[np.ix_(idx, idx)] = 1.0
        adj[idx, n + j] = 1.0
        adj[n + j, idx] = 1.0
    adj[n:, n:] = 1.0
    np.fill_diagonal(adj, 0.0)
    return ClusterGraph(
        categories=categories,
        cluster_labels=tuple(labels),
        clusters=tuple(tuple(members[c]) for c in labels),
        adjacency=adj,
        normalized=normalize_adjacency(adj),
    )


def gcn_forward(h0: Tensor, a_hat: np.ndarray, weights: Sequence[Tensor]) -> Tensor:
    """``H <- ReLU(A_hat H W_l) + H`` for each layer; returns the final ``H``."""
    if len(weights) < 1:
        raise ConfigError("GCN needs at least one layer")
    a = Tensor(np.asarray(a_hat, dtype=h0.dtype))
    h = h0
    for w in weights:
        h = add(relu(matmul(a, matmul(h, w))), h)
    return h


def _attention_logits(query: Tensor, keys: Tensor, wq: Tensor, wk: Tensor) -> Tensor:
    """``(query W_q)(keys W_k)^T / sqrt(A)`` for ``query [S, d]``, ``keys [n, d]``."""
    A = wq.shape[1]
    return scale(matmul(matmul(query, wq), transpose(matmul(keys, wk))), 1.0 / math.sqrt(A))


def intra_cluster_attention(
    rh: Tensor, membership: np.ndarray, cand: Tensor, wq: Tensor, wk: Tensor
) -> tuple[Tensor, Tensor]:
    """Per-cluster candidate-aware pooling.

    ``rh [n, d]``, ``membership [C, n]``, ``cand [S, d]``.  Returns
    ``(r_intra [S, C, d], alpha [S, C, n])`` where ``alpha`` is zero outside
    each cluster.
    """
    S = cand.shape[0]
    C, n = membership.shape
    logits = expand(_attention_logits(cand, rh, wq, wk), 1, C)
    alpha = softmax_masked(logits, membership[None, :, :])
    r = reshape(matmul(reshape(alpha, (S * C, n)), rh), (S, C, rh.shape[1]))
    return r, alpha


def cluster_transform(r: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``ReLU(W r + b) + r``."""
    return add(relu(linear(r, w, b)), r)


def inter_cluster_attention(r_cl: Tensor, cand: Tensor, wq: Tensor, wk: Tensor) -> tuple[Tensor, Tensor]:
    """Candidate-aware pooling over cluster vectors ``r_cl [S, C, d]``.

    Returns ``(r_u [S, d], alpha [S, C])``.
    """
    S, C, d = r_cl.shape
    A = wq.shape[1]
    q = reshape(matmul(cand, wq), (S, A, 1))
    logits = scale(reshape(matmul(matmul(r_cl, wk), q), (S, C)), 1.0 / math.sqrt(A))
    alpha = softmax_masked(logits)
    r = reshape(matmul(reshape(alpha, (S, 1, C)), r_cl), (S, d))
    return r, alpha


def flat_attention(rh: Tensor, cand: Tensor, wq: Tensor, wk: Tensor) -> tuple[Tensor, Tensor]:
    """Single candidate-aware attention over all history nodes."""
    alpha = softmax_masked(_attention_logits(cand, rh, wq, wk))
    return matmul(alpha, rh), alpha


@dataclass
class UserRepresentation:
    vector: Tensor
    graph: ClusterGraph | None = None
    attention: dict[str, np.ndarray] = field(default_factory=dict)


def gcn_weights(params: ModelParams) -> list[Tensor]:
    names = params.with_prefix("sue.gcn.")
    return [params[n] for n in sorted(names, key=lambda s: int(s.split(".")[2]))]


def encode_user(
    history: Tensor | None,
    categories: Sequence[str],
    cand: Tensor,
    params: ModelParams,
    flags: SueFlags = SueFlags(),
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    graph: ClusterGraph | None = None,
) -> UserRepresentation:
    """Candidate-conditioned user vectors ``[S, d]`` for ``cand [S, d]``.

    ``history`` holds the browsed articles' news vectors ``[n, d]``; an empty
    history gives all-zero user vectors.
    """
    S, d = cand.shape
    if history is None or history.shape[0] == 0:
        return UserRepresentation(Tensor(np.zeros((S, d), dtype=cand.dtype)))
    if graph is None:
        graph = build_cluster_graph(categories)
    n = graph.n_news
    attn: dict[str, np.ndarray] = {}

    rh = dropout(history, dropout_rate, training, rng)
    if flags.gcn:
        proxies = Tensor(np.zeros((graph.n_clusters, d), dtype=cand.dtype))
        h = gcn_forward(concat([rh, proxies], axis=0), graph.normalized, gcn_weights(params))
        rh = h[:n]

    if not flags.hierarchical:
        r_u, alpha = flat_attention(rh, cand, params["sue.flat.wq"], params["sue.flat.wk"])
        attn["flat"] = alpha.data
        return UserRepresentation(r_u, graph, attn)

    r_intra, a_intra = intra_cluster_attention(
        rh, graph.membership(), cand, params["sue.intra.wq"], params["sue.intra.wk"]
    )
    r_cl = cluster_transform(r_intra, params["sue.cluster.w"], params["sue.cluster.b"])
    r_u, a_inter = inter_cluster_attention(r_cl, cand, params["sue.inter.wq"], params["sue.inter.wk"])
    attn["intra"] = a_intra.data
    attn["inter"] = a_inter.data
    return UserRepresentation(r_u, graph, attn)
