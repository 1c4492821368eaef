"""Loss functions.  Each returns (scalar loss, gradient w.r.t. inputs)."""
from __future__ import annotations

import numpy as np

BCE_EPS = 1e-7


def mse(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad


def bce(pred: np.ndarray, target: np.ndarray):
    """Binary cross-entropy on probabilities, clamped to [eps, 1-eps]."""
    target = np.broadcast_to(np.asarray(target, dtype=np.float64), pred.shape)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(-np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))
    grad = (p - target) / (p * (1.0 - p)) / p.size
    return loss, grad


def triplet_hinge(anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray,
                  margin: float):
    """Mean of max(0, |a-p|^2 - |a-n|^2 + margin) over rows.

    Returns (loss, (grad_anchor, grad_positive, grad_negative)).
    """
    a = np.atleast_2d(anchor)
    p = np.atleast_2d(positive)
    n = np.atleast_2d(negative)
    dp = ((a - p) ** 2).sum(axis=1)
    dn = ((a - n) ** 2).sum(axis=1)
    viol = dp - dn + margin
    active = (viol > 0).astype(np.float64)
    loss = float(np.mean(np.maximum(viol, 0.0)))
    scale = (active / a.shape[0])[:, None]
    ga = 2.0 * (n - p) * scale
    gp = 2.0 * (p - a) * scale
    gn = 2.0 * (a - n) * scale
    if anchor.ndim == 1:
        ga, gp, gn = ga[0], gp[0], gn[0]
    return loss, (ga, gp, gn)


def categorical_entropy(probs: np.ndarray):
    """Mean entropy of rows of a probability matrix."""
    p = np.clip(np.atleast_2d(probs), 1e-12, 1.0)
    loss = float(-np.mean((p * np.log(p)).sum(axis=1)))
    grad = -(np.log(p) + 1.0) / p.shape[0]
    if probs.ndim == 1:
        grad = grad[0]
    return loss, grad


_KINDS = {
    "mse": mse,
    "bce": bce,
    "triplet_hinge": triplet_hinge,
    "categorical_entropy": categorical_entropy,
}


def loss(kind: str, *args, **kwargs):
    if kind not in _KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    return _KINDS[kind](*args, **kwargs)
