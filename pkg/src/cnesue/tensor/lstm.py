"""Masked LSTM layer built on a fused recurrence op.

The recurrence runs in the compiled kernel when it is importable and falls
back to numpy otherwise.  Set ``CNESUE_KERNELS=python`` to force the
fallback, or call :func:`set_backend` at runtime.
"""
from __future__ import annotations

import logging
import os

import numpy as np

from ..errors import ConfigError, DimensionError
from . import _lstm_ref
from .tensor import Tensor, add_bias, getitem, make_op, matmul, transpose

log = logging.getLogger(__name__)

try:
    from . import _lstm_kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _lstm_ref}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _initial_backend() -> str:
    want = os.environ.get("CNESUE_KERNELS", "auto")
    if want == "auto":
        return "compiled" if _compiled is not None else "python"
    if want not in _BACKENDS:
        log.warning("CNESUE_KERNELS=%s unavailable, using python fallback", want)
        return "python"
    return want


_backend = _initial_backend()


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _BACKENDS:
        raise ConfigError(f"LSTM backend {name!r} not available; have {available_backends()}")
    _backend = name


def kernels(name: str | None = None):
    """Module exposing ``lstm_forward``/``lstm_backward`` for a backend."""
    return _BACKENDS[name or _backend]


def recurrence(xw: Tensor, w_hh: Tensor, mask: np.ndarray, reverse: bool = False) -> tuple[Tensor, Tensor]:
    """Run the gated recurrence over precomputed input projections.

    Args:
        xw: ``[T, B, 4H]`` input projections (bias included).
        w_hh: ``[4H, H]`` recurrent weights.
        mask: ``[T, B]`` truthy for real steps.
        reverse: process from ``T-1`` down to ``0``.

    Returns:
        ``(outputs [T, B, H], c_final [B, H])``.  Outputs at masked steps are
        exactly zero; ``c_final`` is the cell state after the last real step in
        processing order.
    """
    T, B, G = xw.shape
    H = G // 4
    if G != 4 * H or w_hh.shape != (G, H):
        raise DimensionError(f"lstm: projections {xw.shape} incompatible with recurrent weights {w_hh.shape}")
    m = np.ascontiguousarray(np.asarray(mask, dtype=bool).astype(np.uint8))
    if m.shape != (T, B):
        raise DimensionError(f"lstm: mask shape {m.shape} does not match {(T, B)}")
    impl = kernels()
    dt = xw.dtype
    x_c = np.ascontiguousarray(xw.data)
    w_c = np.ascontiguousarray(w_hh.data, dtype=dt)
    hs, cs, gates = impl.lstm_forward(x_c, w_c, m, bool(reverse))
    hs, cs, gates = np.asarray(hs), np.asarray(cs), np.asarray(gates)
    final = 0 if reverse else T - 1
    packed = np.empty((T + 1, B, H), dtype=dt)
    packed[:T] = hs * m[:, :, None]
    packed[T] = cs[final] if T else 0

    def backward(g):
        dh_out = np.ascontiguousarray(g[:T])
        dc_final = np.ascontiguousarray(g[T])
        dxw, dw = impl.lstm_backward(dh_out, dc_final, w_c, m, hs, cs, gates, bool(reverse))
        return np.asarray(dxw), np.asarray(dw)

    out = make_op(packed, (xw, w_hh), backward)
    return getitem(out, slice(0, T)), getitem(out, T)


def lstm(x: Tensor, mask: np.ndarray, w_ih: Tensor, w_hh: Tensor, b: Tensor, reverse: bool = False):
    """Unidirectional masked LSTM over ``x`` of shape ``[B, T, E]``.

    Returns ``(states [B, T, H], c_final [B, H])``.
    """
    if x.ndim != 3 or x.shape[2] != w_ih.shape[1]:
        raise DimensionError(f"lstm: input {x.shape} incompatible with input weights {w_ih.shape}")
    xw = add_bias(matmul(x, transpose(w_ih)), b)
    xw = transpose(xw, (1, 0, 2))
    states, c_final = recurrence(xw, w_hh, np.asarray(mask).T, reverse=reverse)
    return transpose(states, (1, 0, 2)), c_final
