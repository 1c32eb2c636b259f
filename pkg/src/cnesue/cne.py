"""Collaborative news encoding.

Title and content each pass through their own BiLSTM.  The final cell
states of one side gate the hidden states of the other (cross-selection),
then each side is pooled twice: once by additive self-attention and once by
scaled dot-product attention whose query is the *other* side's
self-attentive vector (cross-attention).  The two pooled vectors are summed
per side and the sides concatenated.

Parameter names under ``cne.``::

    embedding                     [V, E]
    {side}.lstm_fwd.{w_ih,w_hh,b} [4H, E], [4H, H], [4H]
    {side}.lstm_bwd.{w_ih,w_hh,b}
    {side}.gate.{w_h,w_m,b}       [2H, 2H], [2H, 2H], [2H]
    {side}.self.{w,b,v}           [A, 2H], [A], [A]
    {side}.cross.{wq,wk}          [2H, A], [2H, A]

where ``side`` is ``title`` or ``content``.  ``{side}.cross`` is the
attention whose keys are that side's states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ModelParams,
    Tensor,
    add,
    concat,
    dropout,
    embedding,
    expand,
    linear,
    lstm,
    matmul,
    mul,
    reshape,
    scale,
    sigmoid,
    softmax_masked,
    tanh,
)

SIDES = ("title", "content")


@dataclass(frozen=True)
class CneFlags:
    cross_select: bool = True
    cross_attend: bool = True


@dataclass
class NewsRepresentation:
    vector: Tensor
    attention: dict[str, np.ndarray] = field(default_factory=dict)

    def word_weights(self, side: str) -> np.ndarray:
        """Per-token weight ``(alpha_self + alpha_cross) / 2`` for ``side``.

        Falls back to ``alpha_self`` when cross-attention is disabled.
        """
        a_self = self.attention[f"{side}_self"]
        a_cross = self.attention.get(f"{side}_cross")
        return a_self if a_cross is None else (a_self + a_cross) / 2


def side_params(params: ModelParams, side: str) -> dict[str, Tensor]:
    prefix = f"cne.{side}."
    return {n[len(prefix):]: params[n] for n in params.with_prefix(prefix)}


def bilstm_encode(emb: Tensor, mask: np.ndarray, p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """States ``h [B, L, 2H]`` and memory ``m [B, 2H]``.

    ``m`` joins the forward cell state at the last real token with the
    backward cell state at the first token.  Padding rows of ``h`` are zero.
    """
    fw, fc = lstm(emb, mask, p["lstm_fwd.w_ih"], p["lstm_fwd.w_hh"], p["lstm_fwd.b"], reverse=False)
    bw, bc = lstm(emb, mask, p["lstm_bwd.w_ih"], p["lstm_bwd.w_hh"], p["lstm_bwd.b"], reverse=True)
    return concat([fw, bw], axis=-1), concat([fc, bc], axis=-1)


def cross_select(h: Tensor, m_other: Tensor, p: dict[str, Tensor]) -> Tensor:
    """``sigmoid(W_h h_i + W_m m + b) * h_i`` for every position ``i``."""
    L = h.shape[1]
    memory_term = expand(linear(m_other, p["gate.w_m"], p["gate.b"]), 1, L)
    gate = sigmoid(add(linear(h, p["gate.w_h"]), memory_term))
    return mul(gate, h)


def self_attend(h: Tensor, mask: np.ndarray, p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Additive attention pooling; returns ``(r_self [B, 2H], alpha [B, L])``."""
    B, L, D = h.shape
    e = tanh(linear(h, p["self.w"], p["self.b"]))
    logits = reshape(matmul(e, reshape(p["self.v"], (-1, 1))), (B, L))
    alpha = softmax_masked(logits, mask)
    r = reshape(matmul(reshape(alpha, (B, 1, L)), h), (B, D))
    return r, alpha


def cross_attend(query: Tensor, keys: Tensor, mask: np.ndarray, p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention with projected query/keys and raw values.

    ``query [B, 2H]`` is the other side's self-attentive vector, ``keys
    [B, L, 2H]`` this side's gated states.  Returns ``(r_cross, alpha)``.
    """
    B, L, D = keys.shape
    wq, wk = p["cross.wq"], p["cross.wk"]
    A = wq.shape[1]
    q = reshape(matmul(query, wq), (B, A, 1))
    k = matmul(keys, wk)
    logits = scale(reshape(matmul(k, q), (B, L)), 1.0 / math.sqrt(A))
    alpha = softmax_masked(logits, mask)
    r = reshape(matmul(reshape(alpha, (B, 1, L)), keys), (B, D))
    return r, alpha


def encode_news(
    title_ids: np.ndarray,
    content_ids: np.ndarray,
    params: ModelParams,
    flags: CneFlags = CneFlags(),
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    keep_attention: bool = False,
) -> NewsRepresentation:
    """Encode a batch of articles to ``[B, 4H]`` news vectors."""
    ids = {"title": np.asarray(title_ids), "content": np.asarray(content_ids)}
    table = params["cne.embedding"]
    sp = {side: side_params(params, side) for side in SIDES}
    masks, states, memory = {}, {}, {}
    for side in SIDES:
        masks[side] = ids[side] != 0
        emb = dropout(embedding(table, ids[side], padding_idx=0), dropout_rate, training, rng)
        states[side], memory[side] = bilstm_encode(emb, masks[side], sp[side])

    other = {"title": "content", "content": "title"}
    gated = {}
    for side in SIDES:
        if flags.cross_select:
            gated[side] = cross_select(states[side], memory[other[side]], sp[side])
        else:
            gated[side] = states[side]

    attn: dict[str, np.ndarray] = {}
    r_self = {}
    for side in SIDES:
        r_self[side], a = self_attend(gated[side], masks[side], sp[side])
        attn[f"{side}_self"] = a.data
    halves = []
    for side in SIDES:
        r = r_self[side]
        if flags.cross_attend:
            r_cross, a = cross_attend(r_self[other[side]], gated[side], masks[side], sp[side])
            attn[f"{side}_cross"] = a.data
            r = add(r, r_cross)
        halves.append(r)
    vec = dropout(concat(halves, axis=-1), dropout_rate, training, rng)
    return NewsRepresentation(vec, attn if keep_attention else {})
