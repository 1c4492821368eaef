"""Synthetic grid-city environment with a drifting spatio-temporal feature field.

The city is an I x J grid observed over H time slots through n feature
channels (traffic volume, travel demand, traffic speed, waiting time,
distance-to-PoI).  Each channel is a seeded mixture of 2-d Gaussian bumps
drifting linearly over time, min-max normalized per channel to [0, 1]; the
PoI channel is time-invariant.  An agent occupies one cell, observes the
l x l feature patch around it (zero-padded at the boundary) and moves with
compass actions, stays, or terminates the episode.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moda.errors import ConfigError, ContractError

ACTION_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW", "STAY", "TERMINATE")
# (di, dj): N decreases the row index, E increases the column index.
ACTION_DELTAS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (0, 0), (0, 0))
N_ACTIONS = 10
TERMINATE = 9

DEFAULT_FEATURE_NAMES = (
    "traffic_volume",
    "travel_demand",
    "traffic_speed",
    "waiting_time",
    "poi_distance",
)
# Channel the terminate bonus reads; the last channel is the static one.
DEMAND_CHANNEL = 1


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    patch: int
    features: int
    horizon: int
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        if min(self.rows, self.cols, self.patch, self.features, self.horizon) < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.patch % 2 == 0:
            raise ConfigError(f"patch size must be odd, got {self.patch}")
        if self.patch > min(self.rows, self.cols):
            raise ConfigError(
                f"patch {self.patch} exceeds grid {self.rows}x{self.cols}"
            )
        names = self.feature_names or DEFAULT_FEATURE_NAMES[: self.features]
        if len(names) != self.features:
            raise ConfigError(
                f"expected {self.features} feature names, got {len(names)}"
            )
        object.__setattr__(self, "feature_names", tuple(names))


@dataclass(frozen=True)
class CellIndex:
    """1-based grid cell: 1 <= i <= rows, 1 <= j <= cols."""

    i: int
    j: int


@dataclass(eq=False)
class StateTensor:
    """Observed l x l feature patch with its time slot and center cell.

    Terminal states may carry t == horizon; they cannot be stepped.
    """

    features: np.ndarray
    t: int
    center: CellIndex

    def __eq__(self, other):
        return (
            isinstance(other, StateTensor)
            and self.t == other.t
            and self.center == other.center
            and np.array_equal(self.features, other.features)
        )

    def copy(self) -> "StateTensor":
        return StateTensor(self.features.copy(), self.t, self.center)


@dataclass
class TaskSpec:
    """A task: unit-norm reward weights, behavior expertise, terminate bonus."""

    task_id: int
    weights: np.ndarray
    expertise: float
    terminate_bonus: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        norm = float(np.linalg.norm(w))
        if norm <= 0 or not np.all(np.isfinite(w)):
            raise ConfigError(f"task {self.task_id}: weights must be finite and nonzero")
        self.weights = w / norm
        if not 0.0 <= self.expertise <= 1.0:
            raise ConfigError(f"task {self.task_id}: expertise must be in [0, 1]")


class GroundTruthEnv:
    """Ground-truth MDP over the generated feature field."""

    def __init__(self, grid: GridSpec, field_data: np.ndarray,
                 tasks: list[TaskSpec], step_cost: float, seed: int):
        self.grid = grid
        self.field = field_data
        self.tasks = list(tasks)
        self.step_cost = float(step_cost)
        self.seed = seed

    # -- observation ------------------------------------------------------

    def patch(self, t: int, center: CellIndex) -> np.ndarray:
        """Zero-padded l x l patch around center; t clamps to the last slot."""
        g = self.grid
        tt = min(t, g.horizon - 1)
        half = g.patch // 2
        out = np.zeros((g.features, g.patch, g.patch))
        i0 = center.i - 1 - half
        j0 = center.j - 1 - half
        si0, si1 = max(i0, 0), min(i0 + g.patch, g.rows)
        sj0, sj1 = max(j0, 0), min(j0 + g.patch, g.cols)
        if si0 < si1 and sj0 < sj1:
            out[:, si0 - i0 : si1 - i0, sj0 - j0 : sj1 - j0] = self.field[
                tt, :, si0:si1, sj0:sj1
            ]
        return out

    def state(self, t: int, center: CellIndex) -> StateTensor:
        return StateTensor(self.patch(t, center), t, center)

    # -- dynamics ----------------------------------------------------------

    def _move(self, center: CellIndex, action: int) -> CellIndex:
        di, dj = ACTION_DELTAS[action]
        ni = min(max(center.i + di, 1), self.grid.rows)
        nj = min(max(center.j + dj, 1), self.grid.cols)
        return CellIndex(ni, nj)

    def action_rewards(self, state: StateTensor, task: TaskSpec) -> np.ndarray:
        """One-step reward of each action from this state."""
        g = self.grid
        t2 = min(state.t + 1, g.horizon - 1)
        out = np.empty(N_ACTIONS)
        for a in range(N_ACTIONS):
            if a == TERMINATE:
                out[a] = task.terminate_bonus * self.field[
                    min(state.t, g.horizon - 1), DEMAND_CHANNEL,
                    state.center.i - 1, state.center.j - 1,
                ]
            else:
                nxt = self._move(state.center, a)
                feats = self.field[t2, :, nxt.i - 1, nxt.j - 1]
                out[a] = float(task.weights @ feats) - self.step_cost
        return out

    def step(self, state: StateTensor, action: int, task: TaskSpec):
        """Apply an action; returns (next_state, reward, done).

        Moving off-grid clamps to the boundary (acts like Stay on that axis).
        Terminate keeps the state and pays the demand-weighted bonus; the
        episode also ends when time reaches the horizon.
        """
        if not 0 <= action < N_ACTIONS:
            raise ContractError(f"action {action} out of range")
        if state.t >= self.grid.horizon:
            raise ContractError("step after episode end (time slots exhausted)")
        if action == TERMINATE:
            reward = task.terminate_bonus * float(
                self.field[state.t, DEMAND_CHANNEL, state.center.i - 1, state.center.j - 1]
            )
            return state.copy(), reward, True
        nxt_center = self._move(state.center, action)
        t2 = state.t + 1
        feats = self.field[min(t2, self.grid.horizon - 1), :, nxt_center.i - 1, nxt_center.j - 1]
        reward = float(task.weights @ feats) - self.step_cost
        return self.state(t2, nxt_center), reward, t2 >= self.grid.horizon

    # -- behavior policy ---------------------------------------------------

    def behavior_action(self, state: StateTensor, task: TaskSpec,
                        rng: np.random.Generator) -> int:
        """Epsilon-greedy one-step lookahead: greedy w.p. expertise, else uniform."""
        if rng.random() < task.expertise:
            return int(np.argmax(self.action_rewards(state, task)))
        return int(rng.integers(N_ACTIONS))

    def behavior_policy(self, task: TaskSpec):
        def policy(state: StateTensor, rng: np.random.Generator) -> int:
            return self.behavior_action(state, task, rng)

        return policy

    def random_start(self, rng: np.random.Generator) -> StateTensor:
        center = CellIndex(
            int(rng.integers(1, self.grid.rows + 1)),
            int(rng.integers(1, self.grid.cols + 1)),
        )
        return self.state(0, center)

    # -- rollouts ----------------------------------------------------------

    def generate_trajectories(self, task: TaskSpec, count: int, max_len: int,
                              seed: int):
        """Behavior-policy trajectories from uniform random start cells at t=0."""
        from moda.datasets import Trajectory, Transition

        if count < 1 or max_len < 1:
            raise ConfigError("count and max_len must be positive")
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(count):
            state = self.random_start(rng)
            transitions = []
            done = False
            while not done and len(transitions) < max_len:
                action = self.behavior_action(state, task, rng)
                nxt, reward, done = self.step(state, action, task)
                transitions.append(Transition(state, action, nxt, reward, task.task_id))
                state = nxt
            out.append(Trajectory(transitions, task.task_id))
        return out

    def evaluate_policy(self, task: TaskSpec, policy, rollouts: int, seed: int):
        """Mean and std of undiscounted returns over fresh rollouts.

        policy is a callable (state, rng) -> action sampled stochastically.
        """
        if rollouts < 1:
            raise ConfigError("rollouts must be positive")
        rng = np.random.default_rng(seed)
        returns = np.empty(rollouts)
        for k in range(rollouts):
            state = self.random_start(rng)
            total = 0.0
            done = False
            while not done:
                action = policy(state, rng)
                state, reward, done = self.step(state, action, task)
                total += reward
            returns[k] = total
        return float(np.mean(returns)), float(np.std(returns))


def build_env(grid: GridSpec, tasks: list[TaskSpec], step_cost: float,
              seed: int) -> GroundTruthEnv:
    """Generate the feature field and wrap it in a ground-truth env.

    Per channel, 3..6 Gaussian bumps with random centers, widths, amplitudes
    and drift velocities are summed over time and min-max normalized; the
    last channel uses zero drift so it is identical across time slots.
    """
    if not tasks:
        raise ConfigError("at least one task is required")
    ids = sorted(t.task_id for t in tasks)
    if ids != list(range(len(tasks))):
        raise ConfigError(f"task ids must be 0..{len(tasks) - 1}, got {ids}")
    for t in tasks:
        if t.weights.shape != (grid.features,):
            raise ConfigError(
                f"task {t.task_id}: expected {grid.features} weights, got {t.weights.shape}"
            )
    rng = np.random.default_rng(seed)
    H, n, I, J = grid.horizon, grid.features, grid.rows, grid.cols
    ii, jj = np.meshgrid(np.arange(I, dtype=np.float64),
                         np.arange(J, dtype=np.float64), indexing="ij")
    ts = np.arange(H, dtype=np.float64)
    field_data = np.empty((H, n, I, J))
    for c in range(n):
        static = c == n - 1
        bumps = int(rng.integers(3, 7))
        raw = np.zeros((H, I, J))
        for _ in range(bumps):
            r0 = rng.uniform(0, I - 1)
            c0 = rng.uniform(0, J - 1)
            width = rng.uniform(1.0, max(2.0, min(I, J) / 3.0))
            amp = rng.uniform(0.5, 1.5)
            if static:
                vr = vc = 0.0
            else:
                vr = rng.uniform(-0.15, 0.15)
                vc = rng.uniform(-0.15, 0.15)
            dr = ii[None, :, :] - (r0 + vr * ts)[:, None, None]
            dc = jj[None, :, :] - (c0 + vc * ts)[:, None, None]
            raw += amp * np.exp(-(dr * dr + dc * dc) / (2.0 * width * width))
        lo, hi = float(raw.min()), float(raw.max())
        field_data[:, c] = (raw - lo) / (hi - lo) if hi > lo else 0.0
    return GroundTruthEnv(grid, field_data, list(tasks), step_cost, seed)
