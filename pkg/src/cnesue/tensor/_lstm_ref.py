"""Pure-numpy LSTM recurrence; fallback when the compiled kernel is absent.

Layout conventions shared with ``_lstm_kernels.pyx``:

* ``xw``    ``[T, B, 4H]``  input projection ``x @ W_ih.T + b`` per step
* ``w_hh``  ``[4H, H]``     recurrent weights, gate order i, f, g, o
* ``mask``  ``[T, B]``      uint8, 1 for real tokens
* ``hs``, ``cs`` ``[T, B, H]`` carried hidden/cell state after step t
* ``gates`` ``[T, B, 4H]``  activated gates per step

A masked step carries the previous state unchanged.  ``reverse`` processes
t = T-1 .. 0.
"""
import numpy as np


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(xw, w_hh, mask, reverse):
    T, B, G = xw.shape
    H = G // 4
    dt = xw.dtype
    h = np.zeros((B, H), dtype=dt)
    c = np.zeros((B, H), dtype=dt)
    hs = np.empty((T, B, H), dtype=dt)
    cs = np.empty((T, B, H), dtype=dt)
    gates = np.empty((T, B, G), dtype=dt)
    w_t = np.ascontiguousarray(w_hh.T)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = xw[t] + h @ w_t
        gi = _sigmoid(z[:, :H])
        gf = _sigmoid(z[:, H:2 * H])
        gg = np.tanh(z[:, 2 * H:3 * H])
        go = _sigmoid(z[:, 3 * H:])
        c_new = gf * c + gi * gg
        h_new = go * np.tanh(c_new)
        m = mask[t].astype(bool)[:, None]
        c = np.where(m, c_new, c)
        h = np.where(m, h_new, h)
        hs[t] = h
        cs[t] = c
        gates[t, :, :H] = gi
        gates[t, :, H:2 * H] = gf
        gates[t, :, 2 * H:3 * H] = gg
        gates[t, :, 3 * H:] = go
        gates[t] *= m
    return hs, cs, gates


def lstm_backward(dh_out, dc_final, w_hh, mask, hs, cs, gates, reverse):
    """Gradients wrt ``xw`` and ``w_hh``.

    ``dh_out`` is the gradient of the masked outputs ``hs * mask``;
    ``dc_final`` the gradient of the cell state after the last processed step.
    """
    T, B, H = hs.shape
    dt = hs.dtype
    dxw = np.zeros((T, B, 4 * H), dtype=dt)
    dw = np.zeros((4 * H, H), dtype=dt)
    dh = np.zeros((B, H), dtype=dt)
    dc = np.array(dc_final, dtype=dt, copy=True)
    zeros = np.zeros((B, H), dtype=dt)
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        p = t + 1 if reverse else t - 1
        h_prev = hs[p] if 0 <= p < T else zeros
        c_prev = cs[p] if 0 <= p < T else zeros
        m = mask[t].astype(bool)[:, None]
        dh = dh + dh_out[t] * m
        gi = gates[t, :, :H]
        gf = gates[t, :, H:2 * H]
        gg = gates[t, :, 2 * H:3 * H]
        go = gates[t, :, 3 * H:]
        tc = np.tanh(cs[t])
        dct = dc + dh * go * (1 - tc * tc)
        dz = np.concatenate(
            [
                dct * gg * gi * (1 - gi),
                dct * c_prev * gf * (1 - gf),
                dct * gi * (1 - gg * gg),
                dh * tc * go * (1 - go),
            ],
            axis=1,
        ) * m
        dxw[t] = dz
        dw += dz.T @ h_prev
        dh = np.where(m, dz @ w_hh, dh)
        dc = np.where(m, dct * gf, dc)
    return dxw, dw
