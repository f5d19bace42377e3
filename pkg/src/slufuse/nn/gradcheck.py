"""Central finite-difference oracle, run in float64."""

from __future__ import annotations

import numpy as np


def numerical_gradient(f, x, h=1e-4):
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, atol=0.0):
    """``||a - n|| / max(||a||, ||n||)``; 0 when both norms are at most ``atol``.

    The floor matters for structurally zero gradients (a bias feeding a
    train-mode batchnorm), where both sides are pure rounding noise.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom <= atol:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(loss_fn, arrays, analytic, h=1e-4, atol=1e-9):
    """Compare analytic gradients against finite differences.

    ``arrays`` maps names to float64 arrays that ``loss_fn()`` reads;
    ``analytic`` maps the same names to the gradients under test.
    Returns ``{name: relative error}``.
    """
    errors = {}
    for name, arr in arrays.items():
        if arr.dtype != np.float64:
            raise TypeError(f"{name}: finite differences need float64, got {arr.dtype}")
        numeric = numerical_gradient(loss_fn, arr, h)
        errors[name] = relative_error(analytic[name], numeric, atol)
    return errors
