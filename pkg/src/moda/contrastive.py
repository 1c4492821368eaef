"""Contrastive sub-trajectory embedding and variance-gated data sharing.

Fixed-length windows of transitions are encoded as stacked image planes and
embedded by a small convolutional network trained with a triplet hinge loss:
positives are nearby windows of the same trajectory, negatives are windows
of other tasks starting near the anchor in space and time.  A window from
another task is shared into the target task when its embedding falls inside
the target's anchor cloud: squared distance to the anchor mean strictly
below the anchors' total variance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moda.errors import MiningError, ShapeError, SharingError
from moda.datasets import (
    EffectiveDataset,
    MultiTaskDataset,
    SubTrajectory,
    partition,
    partition_task,
)
from moda.gridsim import N_ACTIONS, GridSpec
from moda.nnkit import Adam, Conv2d, Dense, GlobalAvgPool, Network, ReLU
from moda.nnkit import checkpoint as ckpt
from moda.nnkit.losses import triplet_hinge

STRATEGIES = ("contrastive", "none", "all", "uds")


@dataclass
class SharingConfig:
    window: int = 3
    positive_range: int = 3
    margin: float = 1.0
    embed_dim: int = 32
    neighbor_radius: int = 2
    sample_fraction: float = 0.15
    epochs: int = 2000
    batch: int = 32
    lr: float = 1e-3
    channels: int = 16

    def __post_init__(self):
        if self.window < 1:
            raise ShapeError(f"window must be positive, got {self.window}")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ShapeError("sample_fraction must be in (0, 1]")


@dataclass(eq=False)
class Triplet:
    anchor: SubTrajectory
    positive: SubTrajectory
    negative: SubTrajectory


def encode_subtrajectory(sub: SubTrajectory, grid: GridSpec, window: int) -> np.ndarray:
    """Stack per-transition planes: n feature channels, a one-hot action
    plane and a constant reward plane, giving (window*(n+11), l, l)."""
    if len(sub.transitions) != window:
        raise ShapeError(
            f"expected a window of {window} transitions, got {len(sub.transitions)}"
        )
    n, l = grid.features, grid.patch
    per = n + N_ACTIONS + 1
    planes = np.zeros((window * per, l, l))
    for k, tr in enumerate(sub.transitions):
        base = k * per
        planes[base : base + n] = tr.state.features
        planes[base + n + tr.action] = 1.0
        planes[base + n + N_ACTIONS] = tr.reward
    return planes


class ContrastiveNet:
    """Four 3x3 conv+ReLU blocks, global average pooling, linear projection."""

    KIND = "contrastive"

    def __init__(self, grid: GridSpec, cfg: SharingConfig, rng: np.random.Generator):
        in_ch = cfg.window * (grid.features + N_ACTIONS + 1)
        c = cfg.channels
        self.net = Network(
            [
                Conv2d(in_ch, c, 3, rng),
                ReLU(),
                Conv2d(c, c, 3, rng),
                ReLU(),
                Conv2d(c, c, 3, rng),
                ReLU(),
                Conv2d(c, c, 3, rng),
                ReLU(),
                GlobalAvgPool(),
                Dense(c, cfg.embed_dim, rng),
            ]
        )
        self.grid = grid
        self.cfg = cfg

    def embed(self, encodings: np.ndarray) -> np.ndarray:
        """(B, C, l, l) -> (B, d)."""
        return self.net.forward(encodings)

    def embed_windows(self, windows, batch: int = 256) -> np.ndarray:
        """Embed sub-trajectories in minibatches."""
        encs = [encode_subtrajectory(s, self.grid, self.cfg.window) for s in windows]
        out = []
        for k in range(0, len(encs), batch):
            out.append(self.embed(np.stack(encs[k : k + batch])))
        return np.concatenate(out, axis=0)

    def save(self, path) -> None:
        arrays = dict(zip(self.net.param_names(), self.net.params()))
        meta = {
            "window": self.cfg.window,
            "embed_dim": self.cfg.embed_dim,
            "channels": self.cfg.channels,
            "features": self.grid.features,
            "patch": self.grid.patch,
        }
        ckpt.save_arrays(path, self.KIND, arrays, meta)

    def load(self, path) -> None:
        arrays, _ = ckpt.load_arrays(path, self.KIND)
        ckpt.restore_params(self.net.params(), self.net.param_names(), arrays, path)


def _window_key(sub: SubTrajectory):
    return (sub.task_id, sub.trajectory_id, sub.start)


def mine_triplets(dataset: MultiTaskDataset, target_task: int, cfg: SharingConfig,
                  rng: np.random.Generator) -> list[Triplet]:
    """Enumerate (anchor, positive, negative) candidates and keep each with
    probability sample_fraction.

    Anchors are the target task's windows.  Positives are other windows of
    the same trajectory whose start offset differs by at most positive_range.
    Negatives are other-task windows starting within neighbor_radius cells
    (Chebyshev) and one time slot of the anchor; when an anchor has no such
    neighbor, one uniformly random other-task window stands in.
    """
    w = cfg.window
    if dataset.n_tasks < 2:
        raise MiningError("mining needs at least two tasks (no negatives exist)")
    per_traj = [
        partition(traj, w, tid)
        for tid, traj in enumerate(dataset.per_task[target_task])
    ]
    others = [
        sub
        for task_id in range(dataset.n_tasks)
        if task_id != target_task
        for sub in partition_task(dataset.per_task[task_id], w)
    ]
    if not others:
        raise MiningError("other tasks contain no full windows (no negatives exist)")
    o_i = np.array([s.transitions[0].state.center.i for s in others])
    o_j = np.array([s.transitions[0].state.center.j for s in others])
    o_t = np.array([s.transitions[0].state.t for s in others])

    triplets: list[Triplet] = []
    for subs in per_traj:
        for a_idx, anchor in enumerate(subs):
            positives = [
                cand
                for c_idx, cand in enumerate(subs)
                if c_idx != a_idx and abs(cand.start - anchor.start) <= cfg.positive_range
            ]
            if not positives:
                continue
            a0 = anchor.transitions[0].state
            near = (
                (np.abs(o_i - a0.center.i) <= cfg.neighbor_radius)
                & (np.abs(o_j - a0.center.j) <= cfg.neighbor_radius)
                & (np.abs(o_t - a0.t) <= 1)
            )
            neg_idx = np.nonzero(near)[0]
            if neg_idx.size == 0:
                neg_idx = np.array([rng.integers(len(others))])
            for pos in positives:
                for n_id in neg_idx:
                    if rng.random() < cfg.sample_fraction:
                        triplets.append(Triplet(anchor, pos, others[int(n_id)]))
    if not triplets:
        raise MiningError(
            "no triplets mined; target task needs trajectories long enough "
            "for at least two windows within positive_range"
        )
    return triplets


def train_contrastive(net: ContrastiveNet, triplets: list[Triplet],
                      rng: np.random.Generator) -> list[float]:
    """Minibatch triplet-hinge training; returns per-epoch mean loss."""
    cfg = net.cfg
    index: dict = {}
    encodings = []
    for t in triplets:
        for sub in (t.anchor, t.positive, t.negative):
            key = _window_key(sub)
            if key not in index:
                index[key] = len(encodings)
                encodings.append(encode_subtrajectory(sub, net.grid, cfg.window))
    encodings = np.stack(encodings)
    a_idx = np.array([index[_window_key(t.anchor)] for t in triplets])
    p_idx = np.array([index[_window_key(t.positive)] for t in triplets])
    n_idx = np.array([index[_window_key(t.negative)] for t in triplets])

    adam = Adam(net.net.params(), cfg.lr, names=net.net.param_names())
    curve = []
    m = len(triplets)
    for _ in range(cfg.epochs):
        order = rng.permutation(m)
        total = 0.0
        for k in range(0, m, cfg.batch):
            sel = order[k : k + cfg.batch]
            b = sel.size
            stacked = encodings[np.concatenate([a_idx[sel], p_idx[sel], n_idx[sel]])]
            emb = net.embed(stacked)
            loss, (ga, gp, gn) = triplet_hinge(
                emb[:b], emb[b : 2 * b], emb[2 * b :], cfg.margin
            )
            net.net.backward(np.concatenate([ga, gp, gn], axis=0))
            adam.step(net.net.grads())
            total += loss * b
        curve.append(total / m)
    return curve


def triplet_satisfaction(net: ContrastiveNet, triplets: list[Triplet]) -> float:
    """Fraction of triplets with |a-p|^2 + margin < |a-n|^2."""
    a = net.embed_windows([t.anchor for t in triplets])
    p = net.embed_windows([t.positive for t in triplets])
    n = net.embed_windows([t.negative for t in triplets])
    dp = ((a - p) ** 2).sum(axis=1)
    dn = ((a - n) ** 2).sum(axis=1)
    return float(np.mean(dp + net.cfg.margin < dn))


# -- the sharing gate ------------------------------------------------------


def sharing_gate(anchor_embeddings: np.ndarray):
    """Mean and total variance of the target's anchor embeddings."""
    m = anchor_embeddings.shape[0]
    if m < 2:
        raise SharingError(
            f"need at least two anchor embeddings, got {m} (variance degenerate)"
        )
    if (anchor_embeddings == anchor_embeddings[0]).all():
        # identical anchors: the exact mean is the common row and the
        # variance is exactly zero, which float summation would miss
        return anchor_embeddings[0].astype(np.float64).copy(), 0.0
    mu = anchor_embeddings.mean(axis=0)
    sigma2 = float(np.mean(((anchor_embeddings - mu) ** 2).sum(axis=1)))
    return mu, sigma2


def share_mask(mu: np.ndarray, sigma2: float,
               candidate_embeddings: np.ndarray) -> np.ndarray:
    """True where a candidate's squared distance to mu is strictly below sigma2."""
    d2 = ((candidate_embeddings - mu) ** 2).sum(axis=1)
    return d2 < sigma2


def share(net: ContrastiveNet, dataset: MultiTaskDataset,
          target_task: int) -> EffectiveDataset:
    """Variance-gated sharing of other-task windows into the target task."""
    w = net.cfg.window
    own = partition_task(dataset.per_task[target_task], w)
    if len(own) < 2:
        raise SharingError(
            f"target task {target_task} has {len(own)} windows; need at least two"
        )
    mu, sigma2 = sharing_gate(net.embed_windows(own))
    shared: list[SubTrajectory] = []
    if sigma2 > 0.0:
        for task_id in range(dataset.n_tasks):
            if task_id == target_task:
                continue
            cands = partition_task(dataset.per_task[task_id], w)
            if not cands:
                continue
            mask = share_mask(mu, sigma2, net.embed_windows(cands))
            shared.extend(c for c, keep in zip(cands, mask) if keep)
    return EffectiveDataset(target_task, own, shared, strategy="contrastive")


def share_baseline(kind: str, dataset: MultiTaskDataset, target_task: int,
                   window: int) -> EffectiveDataset:
    """Baselines: no sharing, share everything, or share with zeroed rewards."""
    own = partition_task(dataset.per_task[target_task], window)
    if kind == "none":
        return EffectiveDataset(target_task, own, [], strategy="none")
    others = [
        sub
        for task_id in range(dataset.n_tasks)
        if task_id != target_task
        for sub in partition_task(dataset.per_task[task_id], window)
    ]
    if kind == "all":
        return EffectiveDataset(target_task, own, others, strategy="all")
    if kind == "uds":
        from moda.datasets import Transition

        zeroed = [
            SubTrajectory(
                tuple(
                    Transition(tr.state, tr.action, tr.next_state, 0.0, tr.task_id)
                    for tr in sub.transitions
                ),
                sub.task_id,
                sub.trajectory_id,
                sub.start,
            )
            for sub in others
        ]
        return EffectiveDataset(target_task, own, zeroed, strategy="uds")
    raise SharingError(f"unknown sharing baseline {kind!r}")
