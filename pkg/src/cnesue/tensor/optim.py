"""Adam and gradient clipping over :class:`ModelParams`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError
from .params import ModelParams


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Parameters absent from ``grads`` keep their values and moments.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params: ModelParams, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        grads = {n: t.grad for n, t in self.params.items() if t.grad is not None}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


def clip_grad_norm(params: ModelParams, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    sq = 0.0
    for _, t in params.items():
        if t.grad is not None:
            sq += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(sq))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for _, t in params.items():
            if t.grad is not None:
                t.grad *= t.grad.dtype.type(factor)
    return norm
