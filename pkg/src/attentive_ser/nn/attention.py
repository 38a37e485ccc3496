"""Additive attention pooling over a hidden-state sequence.

score_t = v . tanh(W h_t), weights = softmax_t(score), context = sum_t weight_t h_t.
"""

from __future__ import annotations

import numpy as np

from .layers import softmax


def attention_pool_forward(H, W, v):
    """H: [N, T, U] (or [T, U]). Returns (context [N, U], weights [N, T], cache)."""
    single = H.ndim == 2
    Hs = H[None] if single else H
    if Hs.shape[1] < 1:
        raise ValueError("attention needs at least one timestep")
    S = np.tanh(Hs @ W)
    scores = S @ v
    weights = softmax(scores, axis=1)
    context = np.einsum("nt,ntu->nu", weights, Hs)
    cache = (Hs, W, v, S, weights, single)
    if single:
        return context[0], weights[0], cache
    return context, weights, cache


def attention_pool_backward(dcontext, cache):
    """Returns (dH, dW, dv) for an upstream gradient on the context vector."""
    Hs, W, v, S, weights, single = cache
    dctx = dcontext[None] if single else dcontext
    dH = weights[:, :, None] * dctx[:, None, :]
    dweights = np.einsum("ntu,nu->nt", Hs, dctx)
    dscores = weights * (dweights - np.sum(weights * dweights, axis=1, keepdims=True))
    dv = np.einsum("nta,nt->a", S, dscores)
    dZ = dscores[:, :, None] * v * (1.0 - S * S)
    dW = np.einsum("ntu,nta->ua", Hs, dZ)
    dH += dZ @ W.T
    return (dH[0] if single else dH), dW, dv
