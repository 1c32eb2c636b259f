# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM recurrence.

Same contract as ``_lstm_ref``; the per-step recurrent product goes through
BLAS gemm, the gate arithmetic is a fused C loop, and the transcendentals
run as whole-block numpy ufunc calls so they stay vectorised.
"""
import numpy as np

cimport numpy as cnp
from cython cimport floating
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()


cdef inline void _gemm(char *ta, char *tb, int m, int n, int k, floating alpha,
                       floating *a, int lda, floating *b, int ldb,
                       floating beta, floating *c, int ldc) noexcept nogil:
    if floating is float:
        sgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def lstm_forward(floating[:, :, ::1] xw, floating[:, ::1] w_hh,
                 const unsigned char[:, ::1] mask, bint reverse):
    cdef Py_ssize_t T = xw.shape[0], B = xw.shape[1], G = xw.shape[2]
    cdef Py_ssize_t H = G // 4
    dtype = np.float32 if floating is float else np.float64
    # Pre-halving the i/f/o rows lets one tanh call serve every gate:
    # sigmoid(x) = 0.5 * tanh(x / 2) + 0.5, and halving is exact.
    half_arr = np.full(G, 0.5, dtype=dtype)
    half_arr[2 * H:3 * H] = 1.0
    w_arr = np.asarray(w_hh) * half_arr[:, None]
    hs_arr = np.zeros((T, B, H), dtype=dtype)
    cs_arr = np.zeros((T, B, H), dtype=dtype)
    gates_arr = np.empty((T, B, G), dtype=dtype)
    z_arr = np.empty((B, G), dtype=dtype)
    h_arr = np.zeros((B, H), dtype=dtype)
    c_arr = np.zeros((B, H), dtype=dtype)
    tc_arr = np.empty((B, H), dtype=dtype)
    cdef floating[::1] half = half_arr
    cdef floating[:, ::1] w = w_arr
    cdef floating[:, :, ::1] hs = hs_arr
    cdef floating[:, :, ::1] cs = cs_arr
    cdef floating[:, :, ::1] gates = gates_arr
    cdef floating[:, ::1] z = z_arr
    cdef floating[:, ::1] h = h_arr
    cdef floating[:, ::1] c = c_arr
    cdef floating[:, ::1] tc = tc_arr
    cdef Py_ssize_t step, t, b, j
    cdef floating gi, gf, gg
    cdef int iG = <int>G, iH = <int>H, iB = <int>B
    if T == 0 or B == 0 or H == 0:
        return hs_arr, cs_arr, gates_arr
    for step in range(T):
        t = T - 1 - step if reverse else step
        with nogil:
            for b in range(B):
                for j in range(G):
                    z[b, j] = xw[t, b, j] * half[j]
            # z[B,4H] += h[B,H] @ w.T, expressed column-major
            _gemm(b"T", b"N", iG, iB, iH, <floating>1.0, &w[0, 0], iH,
                  &h[0, 0], iH, <floating>1.0, &z[0, 0], iG)
        np.tanh(z_arr, out=z_arr)
        with nogil:
            for b in range(B):
                if mask[t, b]:
                    for j in range(H):
                        gi = <floating>0.5 * z[b, j] + <floating>0.5
                        gf = <floating>0.5 * z[b, H + j] + <floating>0.5
                        gg = z[b, 2 * H + j]
                        c[b, j] = gf * c[b, j] + gi * gg
                        gates[t, b, j] = gi
                        gates[t, b, H + j] = gf
                        gates[t, b, 2 * H + j] = gg
                        gates[t, b, 3 * H + j] = <floating>0.5 * z[b, 3 * H + j] + <floating>0.5
                else:
                    for j in range(G):
                        gates[t, b, j] = 0
        np.tanh(c_arr, out=tc_arr)
        with nogil:
            for b in range(B):
                if mask[t, b]:
                    for j in range(H):
                        h[b, j] = gates[t, b, 3 * H + j] * tc[b, j]
                for j in range(H):
                    hs[t, b, j] = h[b, j]
                    cs[t, b, j] = c[b, j]
    return hs_arr, cs_arr, gates_arr


def lstm_backward(floating[:, :, ::1] dh_out, floating[:, ::1] dc_final,
                  floating[:, ::1] w_hh, const unsigned char[:, ::1] mask,
                  floating[:, :, ::1] hs, floating[:, :, ::1] cs,
                  floating[:, :, ::1] gates, bint reverse):
    cdef Py_ssize_t T = hs.shape[0], B = hs.shape[1], H = hs.shape[2]
    cdef Py_ssize_t G = 4 * H
    dtype = np.float32 if floating is float else np.float64
    dxw_arr = np.zeros((T, B, G), dtype=dtype)
    dw_arr = np.zeros((G, H), dtype=dtype)
    dh_arr = np.zeros((B, H), dtype=dtype)
    dc_arr = np.array(dc_final, dtype=dtype, copy=True)
    dhp_arr = np.zeros((B, H), dtype=dtype)
    zero_arr = np.zeros((B, H), dtype=dtype)
    tcs_arr = np.tanh(np.asarray(cs))
    cdef floating[:, :, ::1] dxw = dxw_arr
    cdef floating[:, ::1] dw = dw_arr
    cdef floating[:, ::1] dh = dh_arr
    cdef floating[:, ::1] dc = dc_arr
    cdef floating[:, ::1] dhp = dhp_arr
    cdef floating[:, ::1] zero = zero_arr
    cdef floating[:, :, ::1] tcs = tcs_arr
    cdef floating[:, ::1] h_prev
    cdef floating[:, ::1] c_prev
    cdef Py_ssize_t step, t, p, b, j
    cdef floating gi, gf, gg, go, tc, dct, dhv
    cdef int iG = <int>G, iH = <int>H, iB = <int>B
    for step in range(T):
        t = step if reverse else T - 1 - step
        p = t + 1 if reverse else t - 1
        if 0 <= p < T:
            h_prev = hs[p]
            c_prev = cs[p]
        else:
            h_prev = zero
            c_prev = zero
        with nogil:
            for b in range(B):
                if not mask[t, b]:
                    continue
                for j in range(H):
                    dhv = dh[b, j] + dh_out[t, b, j]
                    gi = gates[t, b, j]
                    gf = gates[t, b, H + j]
                    gg = gates[t, b, 2 * H + j]
                    go = gates[t, b, 3 * H + j]
                    tc = tcs[t, b, j]
                    dct = dc[b, j] + dhv * go * (1 - tc * tc)
                    dxw[t, b, j] = dct * gg * gi * (1 - gi)
                    dxw[t, b, H + j] = dct * c_prev[b, j] * gf * (1 - gf)
                    dxw[t, b, 2 * H + j] = dct * gi * (1 - gg * gg)
                    dxw[t, b, 3 * H + j] = dhv * tc * go * (1 - go)
                    dc[b, j] = dct * gf
            if H > 0 and B > 0:
                # dw[4H,H] += dz.T @ h_prev  (column-major: dw.T = h_prev.T @ dz)
                _gemm(b"N", b"T", iH, iG, iB, <floating>1.0, &h_prev[0, 0], iH,
                      &dxw[t, 0, 0], iG, <floating>1.0, &dw[0, 0], iH)
                # dhp[B,H] = dz @ w_hh  (column-major: dhp.T = w_hh.T @ dz.T)
                _gemm(b"N", b"N", iH, iB, iG, <floating>1.0, &w_hh[0, 0], iH,
                      &dxw[t, 0, 0], iG, <floating>0.0, &dhp[0, 0], iH)
            for b in range(B):
                if mask[t, b]:
                    for j in range(H):
                        dh[b, j] = dhp[b, j]
    return dxw_arr, dw_arr
