"""Finite-difference gradient verification (central differences)."""
from __future__ import annotations

import numpy as np


def numerical_gradients(loss_fn, arrays: list[np.ndarray], h: float = 1e-4):
    """Central-difference gradient of loss_fn() w.r.t. each array entry.

    loss_fn takes no arguments and must read the arrays in place.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat_a = a.reshape(-1)
        flat_g = g.reshape(-1)
        for idx in range(flat_a.size):
            orig = flat_a[idx]
            flat_a[idx] = orig + h
            lp = loss_fn()
            flat_a[idx] = orig - h
            lm = loss_fn()
            flat_a[idx] = orig
            flat_g[idx] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: list[np.ndarray], numerical: list[np.ndarray],
                       floor: float = 1e-3) -> float:
    """Max over entries of |a-n| / max(|a|+|n|, floor)."""
    worst = 0.0
    for a, n in zip(analytic, numerical):
        denom = np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
