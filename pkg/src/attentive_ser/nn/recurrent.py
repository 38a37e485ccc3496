"""Batched LSTM with full backpropagation through time.

Gate layout along the 4U axis is (input, forget, candidate, output).
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_step(x_t, h_prev, c_prev, Wx, Wh, b):
    """One cell step. Returns (h, c, gates) with gates = (i, f, g, o)."""
    U = h_prev.shape[-1]
    a = x_t @ Wx + h_prev @ Wh + b
    i = sigmoid(a[..., :U])
    f = sigmoid(a[..., U : 2 * U])
    g = np.tanh(a[..., 2 * U : 3 * U])
    o = sigmoid(a[..., 3 * U :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, (i, f, g, o)


def lstm_forward(x, Wx, Wh, b):
    """x: [N, T, D] (or [T, D]); zero initial state. Returns (hidden [N, T, U], cache)."""
    single = x.ndim == 2
    xs = x[None] if single else x
    N, T, _ = xs.shape
    U = Wh.shape[0]
    h = np.zeros((N, U), dtype=x.dtype)
    c = np.zeros((N, U), dtype=x.dtype)
    hs = np.empty((N, T, U), dtype=x.dtype)
    cs = np.empty((N, T, U), dtype=x.dtype)
    gates = np.empty((N, T, 4, U), dtype=x.dtype)
    # input projection for all timesteps at once
    xw = xs @ Wx + b
    for t in range(T):
        a = xw[:, t] + h @ Wh
        i = sigmoid(a[:, :U])
        f = sigmoid(a[:, U : 2 * U])
        g = np.tanh(a[:, 2 * U : 3 * U])
        o = sigmoid(a[:, 3 * U :])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[:, t], cs[:, t] = h, c
        gates[:, t, 0], gates[:, t, 1], gates[:, t, 2], gates[:, t, 3] = i, f, g, o
    out = hs[0] if single else hs
    return out, (xs, Wx, Wh, hs, cs, gates, single)


def lstm_backward(dh_seq, cache):
    """BPTT over the whole sequence. dh_seq matches the forward output shape.

    Returns (dx, dWx, dWh, db).
    """
    xs, Wx, Wh, hs, cs, gates, single = cache
    dh_seq = dh_seq[None] if single else dh_seq
    N, T, U = hs.shape
    dx = np.empty_like(xs)
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * U, dtype=Wx.dtype)
    dh_next = np.zeros((N, U), dtype=hs.dtype)
    dc_next = np.zeros((N, U), dtype=hs.dtype)
    da = np.empty((N, 4 * U), dtype=hs.dtype)
    for t in reversed(range(T)):
        i, f, g, o = gates[:, t, 0], gates[:, t, 1], gates[:, t, 2], gates[:, t, 3]
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(c)
        h_prev = hs[:, t - 1] if t > 0 else np.zeros_like(c)
        tc = np.tanh(c)
        dh = dh_seq[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da[:, :U] = dc * g * i * (1.0 - i)
        da[:, U : 2 * U] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * U : 3 * U] = dc * i * (1.0 - g * g)
        da[:, 3 * U :] = dh * tc * o * (1.0 - o)
        dx[:, t] = da @ Wx.T
        dWx += xs[:, t].T @ da
        dWh += h_prev.T @ da
        db += da.sum(axis=0)
        dh_next = da @ Wh.T
        dc_next = dc * f
    return (dx[0] if single else dx), dWx, dWh, db
