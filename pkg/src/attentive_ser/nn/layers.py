"""Feed-forward layers with explicit forward/backward passes.

Tensors are numpy arrays in NHWC layout. Every ``*_forward`` returns the output
and an opaque cache; the matching ``*_backward`` consumes the cache and the
upstream gradient.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


# --- convolution ----------------------------------------------------------------
#
# The padded input is flattened to rows of channels, shape (N*Hp*Wp, Cin). For
# stride 1, output position q (in padded coordinates) reads input rows
# q + i*Wp + j for kernel tap (i, j), so each tap is a matmul over a contiguous
# row slice. Positions falling in the padding margin are computed and dropped.

_IM2COL_MAX_TAPS = 64


def _pads(kh, kw, padding):
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("'same' padding needs odd kernel sizes")
        return kh // 2, kw // 2
    if padding == "valid":
        return 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def conv2d_forward(x, kernels, bias=None, stride=1, padding="same"):
    """2-D convolution (cross-correlation). x: [N,H,W,Cin], kernels: [kh,kw,Cin,Cout]."""
    N, H, W, C = x.shape
    kh, kw, kc, Co = kernels.shape
    if kc != C:
        raise ShapeError(f"input has {C} channels, kernels expect {kc}")
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    ph, pw = _pads(kh, kw, padding)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if ph or pw else x
    Hp, Wp = H + 2 * ph, W + 2 * pw
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("kernel larger than padded input")

    flat = xp.reshape(-1, C)
    P = flat.shape[0]
    M = P - (kh - 1) * Wp - (kw - 1)
    offsets = [i * Wp + j for i in range(kh) for j in range(kw)]
    out = np.zeros((P, Co), dtype=x.dtype)
    if kh * kw * C <= _IM2COL_MAX_TAPS:
        cols = np.empty((M, kh * kw * C), dtype=x.dtype)
        for t, o in enumerate(offsets):
            cols[:, t * C : (t + 1) * C] = flat[o : o + M]
        np.matmul(cols, kernels.reshape(-1, Co), out=out[:M])
    else:
        tmp = np.empty((M, Co), dtype=x.dtype)
        for t, o in enumerate(offsets):
            np.matmul(flat[o : o + M], kernels[t // kw, t % kw], out=tmp)
            out[:M] += tmp
    y = out.reshape(N, Hp, Wp, Co)[:, :Ho:sh, :Wo:sw]
    y = np.ascontiguousarray(y)
    if bias is not None:
        y += bias
    cache = (xp, kernels, (N, H, W, C), (ph, pw), (sh, sw), bias is not None)
    return y, cache


def conv2d_backward(dout, cache, need_input_grad=True):
    """Returns (dx or None, dkernels, dbias or None)."""
    xp, kernels, (N, H, W, C), (ph, pw), (sh, sw), has_bias = cache
    kh, kw, _, Co = kernels.shape
    Hp, Wp = xp.shape[1:3]
    Ho, Wo = Hp - kh + 1, Wp - kw + 1

    dfull = np.zeros((N, Hp, Wp, Co), dtype=dout.dtype)
    dfull[:, :Ho:sh, :Wo:sw] = dout
    de = dfull.reshape(-1, Co)
    flat = xp.reshape(-1, C)
    P = flat.shape[0]
    M = P - (kh - 1) * Wp - (kw - 1)
    offsets = [i * Wp + j for i in range(kh) for j in range(kw)]

    dk = np.empty_like(kernels)
    dxp = np.zeros_like(flat) if need_input_grad else None
    if kh * kw * C <= _IM2COL_MAX_TAPS:
        cols = np.empty((M, kh * kw * C), dtype=xp.dtype)
        for t, o in enumerate(offsets):
            cols[:, t * C : (t + 1) * C] = flat[o : o + M]
        dk[...] = (cols.T @ de[:M]).reshape(kernels.shape)
        if need_input_grad:
            dcols = de[:M] @ kernels.reshape(-1, Co).T
            for t, o in enumerate(offsets):
                dxp[o : o + M] += dcols[:, t * C : (t + 1) * C]
    else:
        tmp = np.empty((M, C), dtype=xp.dtype) if need_input_grad else None
        for t, o in enumerate(offsets):
            i, j = divmod(t, kw)
            dk[i, j] = flat[o : o + M].T @ de[:M]
            if need_input_grad:
                np.matmul(de[:M], kernels[i, j].T, out=tmp)
                dxp[o : o + M] += tmp

    db = dout.sum(axis=(0, 1, 2)) if has_bias else None
    dx = None
    if need_input_grad:
        dx = dxp.reshape(N, Hp, Wp, C)[:, ph : ph + H, pw : pw + W]
        dx = np.ascontiguousarray(dx)
    return dx, dk, db


# --- batch normalisation ------------------------------------------------------------


def _channel_sum_of_products(a, b):
    c = a.shape[-1]
    return np.einsum("ij,ij->j", a.reshape(-1, c), b.reshape(-1, c))


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train",
                      momentum=0.9, eps=1e-5, overwrite_input=False):
    """Per-channel normalisation over every axis but the last.

    In train mode the running statistics are updated in place by an exponential
    moving average (new = momentum*old + (1-momentum)*batch). Eval mode reads
    them and mutates nothing. ``overwrite_input`` lets the caller donate ``x``
    as scratch space.
    """
    axes = tuple(range(x.ndim - 1))
    xhat = x if overwrite_input else x.copy()
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batchnorm in train mode needs a batch of at least 2")
        m = x.size // x.shape[-1]
        mu = x.mean(axis=axes, dtype=np.float64)
        xhat -= mu.astype(x.dtype)
        var = _channel_sum_of_products(xhat, xhat).astype(np.float64) / m
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    elif mode == "eval":
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat -= running_mean.astype(x.dtype)
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    xhat *= inv_std
    out = xhat * gamma
    out += beta
    return out, (xhat, gamma, inv_std, mode)


def batchnorm_backward(dout, cache, overwrite_grad=False):
    xhat, gamma, inv_std, mode = cache
    axes = tuple(range(dout.ndim - 1))
    dgamma = _channel_sum_of_products(dout, xhat)
    dbeta = dout.sum(axis=axes)
    dx = dout if overwrite_grad else dout.copy()
    if mode == "eval":
        dx *= gamma * inv_std
        return dx, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    # dx = gamma*inv_std/m * (m*dout - sum(dout) - xhat*sum(dout*xhat))
    dx -= (dbeta / m).astype(dx.dtype)
    dx -= xhat * (dgamma / m).astype(dx.dtype)
    dx *= gamma * inv_std
    return dx, dgamma, dbeta


# --- ELU ------------------------------------------------------------------------


def elu_forward(x, alpha=1.0, overwrite_input=False):
    neg = np.minimum(x, 0)
    np.expm1(neg, out=neg)
    if alpha != 1.0:
        neg *= alpha
    out = np.maximum(x, 0, out=x if overwrite_input else None)
    out += neg
    return out, (out, alpha)


def elu_backward(dout, cache, overwrite_grad=False):
    # out > 0 exactly where x > 0, and alpha*e^x = out + alpha on the other side
    out, alpha = cache
    if alpha == 1.0:
        # 1 + out <= 1 iff out <= 0, so the min selects the right branch
        d = np.add(out, 1.0, dtype=out.dtype)
        np.minimum(d, 1.0, out=d)
    else:
        d = np.where(out > 0, 1.0, out + alpha).astype(dout.dtype)
    if overwrite_grad:
        dout *= d
        return dout
    d *= dout
    return d


def elu(x, alpha=1.0):
    x = np.asarray(x, dtype=float)
    return elu_forward(x.reshape(-1), alpha)[0].reshape(x.shape)


# --- max pooling -------------------------------------------------------------------


def _windows(x, ph, pw):
    N, H, W, C = x.shape
    return x.reshape(N, H // ph, ph, W // pw, pw, C)


def maxpool_forward(x, window):
    """Non-overlapping max pool (stride = window) over H and W.

    Ties resolve to the first maximum in row-major window order, and only that
    position receives gradient.
    """
    ph, pw = (window, window) if np.isscalar(window) else window
    N, H, W, C = x.shape
    if H % ph or W % pw:
        raise ShapeError(f"input {H}x{W} not divisible by pool window {ph}x{pw}")
    xv = _windows(x, ph, pw)
    out = xv[:, :, 0, :, 0, :].copy()
    idx_type = np.uint8 if ph * pw < 256 else np.int64
    idx = np.zeros(out.shape, dtype=idx_type)
    better = np.empty(out.shape, dtype=bool)
    # strict > keeps the earliest tap on ties; taps only grow, so tap - idx >= 0
    for tap in range(1, ph * pw):
        a, b = divmod(tap, pw)
        v = xv[:, :, a, :, b, :]
        np.greater(v, out, out=better)
        idx += better.view(np.uint8) * (idx_type(tap) - idx)
        np.maximum(out, v, out=out)
    return out, (idx, (ph, pw), x.shape)


def maxpool_backward(dout, cache):
    idx, (ph, pw), shape = cache
    dx = np.empty(shape, dtype=dout.dtype)
    dxv = _windows(dx, ph, pw)
    for tap in range(ph * pw):
        a, b = divmod(tap, pw)
        np.multiply(dout, idx == tap, out=dxv[:, :, a, :, b, :])
    return dx


# --- dense + softmax + cross-entropy -------------------------------------------------


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def dense_softmax_xent(x, W, b, labels=None):
    """Affine map, softmax and mean cross-entropy over the batch.

    x: [N, D] (or [D]); labels: int array [N] (or int). Returns (probs, loss, cache);
    loss is None when no labels are given.
    """
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    logits = x2 @ W + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    loss = None
    y = None
    if labels is not None:
        y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
        if y.shape[0] != x2.shape[0]:
            raise ShapeError("one label per example required")
        if np.any((y < 0) | (y >= W.shape[1])):
            raise ValueError(f"label out of range 0..{W.shape[1] - 1}")
        loss = float(-log_probs[np.arange(len(y)), y].mean())
    return (probs[0] if single else probs), loss, (x2, W, probs, y, single)


def dense_softmax_xent_backward(cache):
    """Gradient of the mean loss via the (probs - onehot) shortcut."""
    x2, W, probs, y, single = cache
    n = x2.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dx = dlogits @ W.T
    return (dx[0] if single else dx), x2.T @ dlogits, dlogits.sum(axis=0)
