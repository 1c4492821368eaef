"""Per-task world model: learned dynamics, a GAN transition detector and the
robust MDP that gates rollouts on transition reliability.

The dynamics model predicts next-state features and reward from flattened
(state, action).  The GAN is trained on real transition vectors; its
discriminator then scores any proposed transition, and the robust MDP ends
an episode with a penalty when a predicted transition scores below the
reliability threshold.  Threshold 0 disables the gate entirely, which is
the ablation variant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moda.errors import ConfigError, ContractError
from moda.datasets import Transition
from moda.gridsim import (
    ACTION_DELTAS,
    N_ACTIONS,
    TERMINATE,
    CellIndex,
    GridSpec,
    StateTensor,
)
from moda.nnkit import Adam, Dense, Network, ReLU, Sigmoid
from moda.nnkit import checkpoint as ckpt
from moda.nnkit.losses import bce, mse
from moda.nnkit.ops import one_hot, sigmoid, softmax

SCORE_EPS = 1e-7


def state_vector(state: StateTensor, horizon: int) -> np.ndarray:
    """Flattened patch features plus the normalized time slot."""
    return np.concatenate([state.features.ravel(), [state.t / horizon]])


def state_dim(grid: GridSpec) -> int:
    return grid.features * grid.patch * grid.patch + 1


def dynamics_input(state_vecs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.concatenate([np.atleast_2d(state_vecs), one_hot(actions, N_ACTIONS)], axis=1)


def transition_vectors(transitions: list[Transition], grid: GridSpec) -> np.ndarray:
    """(state features, one-hot action, next features, reward) rows for the GAN."""
    nf = grid.features * grid.patch * grid.patch
    out = np.empty((len(transitions), 2 * nf + N_ACTIONS + 1))
    for k, tr in enumerate(transitions):
        out[k, :nf] = tr.state.features.ravel()
        out[k, nf : nf + N_ACTIONS] = 0.0
        out[k, nf + tr.action] = 1.0
        out[k, nf + N_ACTIONS : nf + N_ACTIONS + nf] = tr.next_state.features.ravel()
        out[k, -1] = tr.reward
    return out


class DynamicsModel:
    """Two heads over flattened (state, action): next features and reward."""

    KIND = "dynamics"

    def __init__(self, grid: GridSpec, hidden: int, rng: np.random.Generator):
        nf = grid.features * grid.patch * grid.patch
        in_dim = state_dim(grid) + N_ACTIONS
        self.state_net = Network([Dense(in_dim, hidden, rng), ReLU(), Dense(hidden, nf, rng)])
        self.reward_net = Network([Dense(in_dim, hidden, rng), ReLU(), Dense(hidden, 1, rng)])
        self.grid = grid
        self.hidden = hidden

    def predict(self, x: np.ndarray):
        x = np.atleast_2d(x)
        return self.state_net.forward(x), self.reward_net.forward(x)[:, 0]

    def params(self):
        return self.state_net.params() + self.reward_net.params()

    def grads(self):
        return self.state_net.grads() + self.reward_net.grads()

    def param_names(self):
        return [f"state.{n}" for n in self.state_net.param_names()] + [
            f"reward.{n}" for n in self.reward_net.param_names()
        ]

    def save(self, path) -> None:
        meta = {"hidden": self.hidden, "features": self.grid.features,
                "patch": self.grid.patch, "horizon": self.grid.horizon}
        ckpt.save_arrays(path, self.KIND, dict(zip(self.param_names(), self.params())), meta)

    def load(self, path) -> None:
        arrays, _ = ckpt.load_arrays(path, self.KIND)
        ckpt.restore_params(self.params(), self.param_names(), arrays, path)


def prepare_dynamics_data(transitions: list[Transition], grid: GridSpec):
    """Input matrix and next-feature / reward targets."""
    H = grid.horizon
    svecs = np.stack([state_vector(tr.state, H) for tr in transitions])
    acts = np.array([tr.action for tr in transitions])
    x = dynamics_input(svecs, acts)
    y_next = np.stack([tr.next_state.features.ravel() for tr in transitions])
    y_r = np.array([tr.reward for tr in transitions])
    return x, y_next, y_r


def dynamics_mse(model: DynamicsModel, transitions: list[Transition]) -> float:
    """Combined next-feature and reward MSE on a transition set."""
    x, y_next, y_r = prepare_dynamics_data(transitions, model.grid)
    pred_next, pred_r = model.predict(x)
    return float(np.mean((pred_next - y_next) ** 2) + np.mean((pred_r - y_r) ** 2))


def train_dynamics(model: DynamicsModel, transitions: list[Transition],
                   epochs: int, batch: int, lr: float, rng: np.random.Generator,
                   eval_transitions: list[Transition] | None = None,
                   eval_epochs: tuple[int, ...] = ()):
    """Minibatch MSE training.  Returns (per-epoch loss curve, {epoch: held-out mse}).

    eval_epochs asks for held-out MSE snapshots after those many epochs.
    """
    if not transitions:
        raise ConfigError("no transitions to train the dynamics model on")
    x, y_next, y_r = prepare_dynamics_data(transitions, model.grid)
    adam = Adam(model.params(), lr, names=model.param_names())
    m = x.shape[0]
    curve = []
    snapshots: dict[int, float] = {}
    for epoch in range(1, epochs + 1):
        order = rng.permutation(m)
        total = 0.0
        for k in range(0, m, batch):
            sel = order[k : k + batch]
            pred_next = model.state_net.forward(x[sel])
            pred_r = model.reward_net.forward(x[sel])
            l1, g1 = mse(pred_next, y_next[sel])
            l2, g2 = mse(pred_r, y_r[sel][:, None])
            model.state_net.backward(g1)
            model.reward_net.backward(g2)
            adam.step(model.grads())
            total += (l1 + l2) * sel.size
        curve.append(total / m)
        if eval_transitions is not None and epoch in eval_epochs:
            snapshots[epoch] = dynamics_mse(model, eval_transitions)
    return curve, snapshots


class Generator:
    """Maps latent noise to a transition vector with structured heads:
    sigmoid for both feature blocks, softmax for the action, linear reward."""

    KIND = "generator"

    def __init__(self, grid: GridSpec, z_dim: int, hidden: int, rng: np.random.Generator):
        nf = grid.features * grid.patch * grid.patch
        self.nf = nf
        out = 2 * nf + N_ACTIONS + 1
        self.net = Network([Dense(z_dim, hidden, rng), ReLU(), Dense(hidden, out, rng)])
        self.z_dim = z_dim
        self.hidden = hidden
        self.grid = grid
        self._cache = None

    def sample(self, z: np.ndarray) -> np.ndarray:
        raw = self.net.forward(z)
        nf = self.nf
        s = sigmoid(raw[:, :nf])
        a = softmax(raw[:, nf : nf + N_ACTIONS])
        s2 = sigmoid(raw[:, nf + N_ACTIONS : 2 * nf + N_ACTIONS])
        r = raw[:, -1:]
        self._cache = (s, a, s2)
        return np.concatenate([s, a, s2, r], axis=1)

    def backward(self, dout: np.ndarray) -> None:
        if self._cache is None:
            raise ContractError("backward before sample")
        nf = self.nf
        s, a, s2 = self._cache
        draw = np.empty_like(dout)
        draw[:, :nf] = dout[:, :nf] * s * (1.0 - s)
        da = dout[:, nf : nf + N_ACTIONS]
        draw[:, nf : nf + N_ACTIONS] = a * (da - (da * a).sum(axis=1, keepdims=True))
        ds2 = dout[:, nf + N_ACTIONS : 2 * nf + N_ACTIONS]
        draw[:, nf + N_ACTIONS : 2 * nf + N_ACTIONS] = ds2 * s2 * (1.0 - s2)
        draw[:, -1:] = dout[:, -1:]
        self.net.backward(draw)

    def save(self, path) -> None:
        meta = {"z_dim": self.z_dim, "hidden": self.hidden,
                "features": self.grid.features, "patch": self.grid.patch}
        ckpt.save_arrays(path, self.KIND,
                         dict(zip(self.net.param_names(), self.net.params())), meta)

    def load(self, path) -> None:
        arrays, _ = ckpt.load_arrays(path, self.KIND)
        ckpt.restore_params(self.net.params(), self.net.param_names(), arrays, path)


class Discriminator:
    """Scores transition vectors; outputs lie strictly inside (0, 1)."""

    KIND = "discriminator"

    def __init__(self, grid: GridSpec, hidden: int, rng: np.random.Generator):
        nf = grid.features * grid.patch * grid.patch
        in_dim = 2 * nf + N_ACTIONS + 1
        self.net = Network([Dense(in_dim, hidden, rng), ReLU(), Dense(hidden, 1, rng), Sigmoid()])
        self.hidden = hidden
        self.grid = grid

    def score(self, x: np.ndarray) -> np.ndarray:
        probs = self.net.forward(np.atleast_2d(x))[:, 0]
        return np.clip(probs, SCORE_EPS, 1.0 - SCORE_EPS)

    def save(self, path) -> None:
        meta = {"hidden": self.hidden, "features": self.grid.features,
                "patch": self.grid.patch}
        ckpt.save_arrays(path, self.KIND,
                         dict(zip(self.net.param_names(), self.net.params())), meta)

    def load(self, path) -> None:
        arrays, _ = ckpt.load_arrays(path, self.KIND)
        ckpt.restore_params(self.net.params(), self.net.param_names(), arrays, path)


def gan_objective(disc: Discriminator, real: np.ndarray, fake: np.ndarray) -> float:
    """mean log D(real) + mean log(1 - D(fake)) with clamped scores."""
    return float(
        np.mean(np.log(disc.score(real))) + np.mean(np.log1p(-disc.score(fake)))
    )


def train_gan(gen: Generator, disc: Discriminator, transitions: list[Transition],
              epochs: int, batch: int, lr_g: float, lr_d: float,
              rng: np.random.Generator):
    """Alternating single steps: one discriminator update on real-vs-generated,
    then one non-saturating generator update through the discriminator.

    Returns (discriminator loss curve, generator loss curve).
    """
    if not transitions:
        raise ConfigError("no transitions to train the GAN on")
    real = transition_vectors(transitions, gen.grid)
    adam_d = Adam(disc.net.params(), lr_d, names=disc.net.param_names())
    adam_g = Adam(gen.net.params(), lr_g, names=gen.net.param_names())
    m = real.shape[0]
    d_curve, g_curve = [], []
    for _ in range(epochs):
        order = rng.permutation(m)
        d_total = 0.0
        g_total = 0.0
        for k in range(0, m, batch):
            sel = order[k : k + batch]
            b = sel.size
            # discriminator step
            z = rng.standard_normal((b, gen.z_dim))
            fake = gen.sample(z)
            x = np.concatenate([real[sel], fake], axis=0)
            labels = np.concatenate([np.ones(b), np.zeros(b)])
            probs = disc.net.forward(x)[:, 0]
            d_loss, dp = bce(probs, labels)
            disc.net.backward(dp[:, None])
            adam_d.step(disc.net.grads())
            # generator step (non-saturating: push fakes toward the real label)
            z2 = rng.standard_normal((b, gen.z_dim))
            fake2 = gen.sample(z2)
            probs2 = disc.net.forward(fake2)[:, 0]
            g_loss, dp2 = bce(probs2, np.ones(b))
            dfake = disc.net.backward(dp2[:, None])
            gen.backward(dfake)
            adam_g.step(gen.net.grads())
            d_total += d_loss * b
            g_total += g_loss * b
        d_curve.append(d_total / m)
        g_curve.append(g_total / m)
    return d_curve, g_curve


def corrupt_next_states(vectors: np.ndarray, grid: GridSpec,
                        rng: np.random.Generator) -> np.ndarray:
    """Shuffle the next-state block across rows, keeping (s, a, r) in place."""
    nf = grid.features * grid.patch * grid.patch
    out = vectors.copy()
    perm = rng.permutation(vectors.shape[0])
    out[:, nf + N_ACTIONS : 2 * nf + N_ACTIONS] = vectors[
        perm, nf + N_ACTIONS : 2 * nf + N_ACTIONS
    ]
    return out


def detector_auc(disc: Discriminator, real: np.ndarray,
                 corrupted: np.ndarray) -> float:
    """AUC of discriminator scores separating real from corrupted rows."""
    s_real = disc.score(real)
    s_bad = disc.score(corrupted)
    scores = np.concatenate([s_real, s_bad])
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    ranks[order] = np.arange(1, scores.size + 1)
    # average ranks over ties
    sorted_scores = scores[order]
    k = 0
    while k < scores.size:
        k2 = k
        while k2 + 1 < scores.size and sorted_scores[k2 + 1] == sorted_scores[k]:
            k2 += 1
        if k2 > k:
            ranks[order[k : k2 + 1]] = 0.5 * (k + 1 + k2 + 1)
        k = k2 + 1
    n1 = s_real.size
    n2 = s_bad.size
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n2))


class RobustMdp:
    """Learned MDP with the detector gate.

    Episodes start from a state of the effective dataset's transition pool.
    A step predicts (next features, reward), scores the transition, and ends
    the episode with the penalty reward when the score falls strictly below
    the threshold.  Terminate ends the episode like in the real environment,
    and time running out ends it too.  Predicted features are clipped into
    [0, 1] for the next state; the detector sees the raw prediction.
    """

    def __init__(self, dynamics: DynamicsModel, detector: Discriminator,
                 pool: list[StateTensor], threshold: float, penalty: float,
                 grid: GridSpec):
        if not pool:
            raise ConfigError("the initial-state pool is empty")
        if not 0.0 <= threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
        self.dynamics = dynamics
        self.detector = detector
        self.pool = pool
        self.threshold = float(threshold)
        self.penalty = float(penalty)
        self.grid = grid

    def reset(self, rng: np.random.Generator) -> StateTensor:
        return self.pool[int(rng.integers(len(self.pool)))].copy()

    def step(self, state: StateTensor, action: int):
        g = self.grid
        if state.t >= g.horizon:
            raise ContractError("step after episode end (time slots exhausted)")
        if not 0 <= action < N_ACTIONS:
            raise ContractError(f"action {action} out of range")
        svec = state_vector(state, g.horizon)
        x = dynamics_input(svec, np.array([action]))
        pred_next, pred_r = self.dynamics.predict(x)
        raw_next = pred_next[0]
        reward = float(pred_r[0])
        nf = raw_next.size
        tvec = np.empty(2 * nf + N_ACTIONS + 1)
        tvec[:nf] = state.features.ravel()
        tvec[nf : nf + N_ACTIONS] = 0.0
        tvec[nf + action] = 1.0
        tvec[nf + N_ACTIONS : 2 * nf + N_ACTIONS] = raw_next
        tvec[-1] = reward
        score = float(self.detector.score(tvec)[0])
        if score < self.threshold:
            return state.copy(), self.penalty, True
        feats = np.clip(raw_next, 0.0, 1.0).reshape(g.features, g.patch, g.patch)
        if action == TERMINATE:
            return StateTensor(feats, state.t, state.center), reward, True
        di, dj = ACTION_DELTAS[action]
        center = CellIndex(
            min(max(state.center.i + di, 1), g.rows),
            min(max(state.center.j + dj, 1), g.cols),
        )
        t2 = state.t + 1
        return StateTensor(feats, t2, center), reward, t2 >= g.horizon
