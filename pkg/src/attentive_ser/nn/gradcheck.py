"""Central finite differences for validating analytic gradients."""

from __future__ import annotations

import numpy as np


def numerical_gradient(f, x, h=1e-5, indices=None):
    """d f / d x by central differences, perturbing ``x`` in place.

    ``f`` takes no arguments and returns a scalar; it must read ``x``. When
    ``indices`` (flat positions) is given, only those entries are estimated and
    a 1-D array in the same order is returned.
    """
    flat = x.reshape(-1)
    if indices is None:
        positions = range(flat.size)
        grad = np.zeros_like(x, dtype=float).reshape(-1)
    else:
        positions = list(indices)
        grad = np.zeros(len(positions))
    for k, pos in enumerate(positions):
        orig = flat[pos]
        flat[pos] = orig + h
        fp = f()
        flat[pos] = orig - h
        fm = f()
        flat[pos] = orig
        grad[pos if indices is None else k] = (fp - fm) / (2 * h)
    return grad.reshape(x.shape) if indices is None else grad


def relative_error(analytic, numeric, floor=1e-8):
    """||a - n|| / max(||a||, ||n||, floor), Euclidean norms over the whole tensor.

    Tensor-level norms keep one near-zero entry from dominating the ratio; the
    floor only matters for gradients that are exactly zero.
    """
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)
