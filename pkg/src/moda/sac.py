"""Discrete soft actor-critic trained inside a learned MDP.

Softmax policy over the ten actions, twin critics with target networks and
Polyak averaging.  Critic targets take the policy expectation over next
actions of min(Q1', Q2') minus the entropy term; actor gradients follow
from the exact softmax derivative of the expected soft objective.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from moda.errors import ConfigError
from moda.gridsim import N_ACTIONS, StateTensor
from moda.nnkit import Adam, Dense, Network, ReLU
from moda.nnkit import checkpoint as ckpt
from moda.nnkit.ops import log_softmax, softmax
from moda.worldmodel import RobustMdp, state_vector


@dataclass
class SacConfig:
    episodes: int = 20000
    batch: int = 64
    discount: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    buffer: int = 300000
    warmup: int = 1000
    hidden: int = 128
    twin: bool = True

    def __post_init__(self):
        if self.episodes < 1 or self.batch < 1 or self.buffer < 1:
            raise ConfigError("episodes, batch and buffer must be positive")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount must be in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must be in (0, 1]")


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, state_dim: int, capacity: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def push(self, state, action, reward, next_state, done) -> None:
        k = self._head
        self.states[k] = state
        self.actions[k] = action
        self.rewards[k] = reward
        self.next_states[k] = next_state
        self.dones[k] = float(done)
        self._head = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.dones[idx],
        )


def _mlp(in_dim: int, hidden: int, out_dim: int, rng) -> Network:
    return Network([
        Dense(in_dim, hidden, rng), ReLU(),
        Dense(hidden, hidden, rng), ReLU(),
        Dense(hidden, out_dim, rng),
    ])


def select_action(actor: Network, state_vec: np.ndarray,
                  rng: np.random.Generator, deterministic: bool = False) -> int:
    logits = actor.forward(np.atleast_2d(state_vec))[0]
    if deterministic:
        return int(np.argmax(logits))
    probs = softmax(logits)
    cum = np.cumsum(probs)
    return int(min(np.searchsorted(cum, rng.random()), N_ACTIONS - 1))


class SacAgent:
    """Actor, twin critics and their target copies, with Adam optimizers."""

    def __init__(self, state_dim: int, cfg: SacConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.actor = _mlp(state_dim, cfg.hidden, N_ACTIONS, rng)
        self.q1 = _mlp(state_dim, cfg.hidden, N_ACTIONS, rng)
        self.q2 = _mlp(state_dim, cfg.hidden, N_ACTIONS, rng)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        self.opt_actor = Adam(self.actor.params(), cfg.lr_actor,
                              names=self.actor.param_names())
        self.opt_q1 = Adam(self.q1.params(), cfg.lr_critic, names=self.q1.param_names())
        self.opt_q2 = Adam(self.q2.params(), cfg.lr_critic, names=self.q2.param_names())

    def compute_targets(self, rewards, next_states, dones) -> np.ndarray:
        """y = r + discount * (1 - done) * E_pi[min Q'(s', a) - alpha log pi]."""
        cfg = self.cfg
        logits = self.actor.forward(next_states)
        logp = log_softmax(logits)
        probs = np.exp(logp)
        q1t = self.q1_target.forward(next_states)
        qt = np.minimum(q1t, self.q2_target.forward(next_states)) if cfg.twin else q1t
        v = (probs * (qt - cfg.alpha * logp)).sum(axis=1)
        return rewards + cfg.discount * (1.0 - dones) * v

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> dict:
        cfg = self.cfg
        states, actions, rewards, next_states, dones = buffer.sample(cfg.batch, rng)
        y = self.compute_targets(rewards, next_states, dones)
        b = states.shape[0]
        rows = np.arange(b)

        critic_loss = 0.0
        for qnet, opt in ((self.q1, self.opt_q1), (self.q2, self.opt_q2)):
            q = qnet.forward(states)
            diff = q[rows, actions] - y
            critic_loss += float(np.mean(diff * diff))
            dq = np.zeros_like(q)
            dq[rows, actions] = 2.0 * diff / b
            qnet.backward(dq)
            opt.step(qnet.grads())
            if not cfg.twin:
                break

        # actor step against the updated critics (values only, no critic grads)
        q1 = self.q1.forward(states)
        qmin = np.minimum(q1, self.q2.forward(states)) if cfg.twin else q1
        logits = self.actor.forward(states)
        logp = log_softmax(logits)
        probs = np.exp(logp)
        h = cfg.alpha * logp - qmin
        actor_loss = float(np.mean((probs * h).sum(axis=1)))
        dlogits = probs * (h - (probs * h).sum(axis=1, keepdims=True)) / b
        self.actor.backward(dlogits)
        self.opt_actor.step(self.actor.grads())

        self._soft_update(self.q1_target, self.q1)
        if cfg.twin:
            self._soft_update(self.q2_target, self.q2)
        entropy = float(np.mean(-(probs * logp).sum(axis=1)))
        return {"critic_loss": critic_loss, "actor_loss": actor_loss,
                "entropy": entropy}

    def _soft_update(self, target: Network, online: Network) -> None:
        tau = self.cfg.tau
        for pt, po in zip(target.params(), online.params()):
            pt *= 1.0 - tau
            pt += tau * po


class Policy:
    """Trained actor over flattened states; callable as (state, rng) -> action."""

    KIND = "policy"

    def __init__(self, actor: Network, horizon: int, hidden: int, state_dim: int):
        self.actor = actor
        self.horizon = horizon
        self.hidden = hidden
        self.state_dim = state_dim

    def act(self, state: StateTensor, rng: np.random.Generator,
            deterministic: bool = False) -> int:
        vec = state_vector(state, self.horizon)
        return select_action(self.actor, vec, rng, deterministic)

    def __call__(self, state, rng):
        return self.act(state, rng)

    def probabilities(self, state: StateTensor) -> np.ndarray:
        vec = state_vector(state, self.horizon)
        return softmax(self.actor.forward(np.atleast_2d(vec))[0])

    def save(self, path) -> None:
        meta = {"horizon": self.horizon, "hidden": self.hidden,
                "state_dim": self.state_dim}
        ckpt.save_arrays(path, self.KIND,
                         dict(zip(self.actor.param_names(), self.actor.params())), meta)

    @classmethod
    def load(cls, path) -> "Policy":
        arrays, meta = ckpt.load_arrays(path, cls.KIND)
        rng = np.random.default_rng(0)
        actor = _mlp(int(meta["state_dim"]), int(meta["hidden"]), N_ACTIONS, rng)
        ckpt.restore_params(actor.params(), actor.param_names(), arrays, path)
        return cls(actor, int(meta["horizon"]), int(meta["hidden"]),
                   int(meta["state_dim"]))


def train_policy(mdp: RobustMdp, cfg: SacConfig, rng: np.random.Generator):
    """Train SAC inside the robust MDP; one update per env step after warmup.

    Returns (Policy, diagnostics) where diagnostics carries per-episode model
    returns and the last update's losses.
    """
    sdim = mdp.grid.features * mdp.grid.patch * mdp.grid.patch + 1
    agent = SacAgent(sdim, cfg, rng)
    buffer = ReplayBuffer(sdim, cfg.buffer)
    horizon = mdp.grid.horizon
    steps = 0
    returns = []
    last_diag: dict = {}
    for _ in range(cfg.episodes):
        state = mdp.reset(rng)
        total = 0.0
        done = state.t >= horizon
        while not done:
            vec = state_vector(state, horizon)
            if steps < cfg.warmup:
                action = int(rng.integers(N_ACTIONS))
            else:
                action = select_action(agent.actor, vec, rng)
            nxt, reward, done = mdp.step(state, action)
            buffer.push(vec, action, reward, state_vector(nxt, horizon), done)
            steps += 1
            if steps > cfg.warmup and len(buffer) >= cfg.batch:
                last_diag = agent.update(buffer, rng)
            state = nxt
            total += reward
        returns.append(total)
    policy = Policy(agent.actor, horizon, cfg.hidden, sdim)
    return policy, {"episode_returns": returns, **last_diag}
