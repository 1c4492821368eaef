"""Trajectory containers, sub-trajectory partitioning and JSONL storage.

A trajectory with T transitions is stored as T+1 state records (each
transition's next state is the following record's state), so writing and
reading a dataset is a lossless round trip.  Time slots must advance by one
per transition except for a trailing Terminate, which keeps the state; a
file violating this is rejected on load.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from moda.errors import DatasetError
from moda.gridsim import TERMINATE, CellIndex, GridSpec, StateTensor

DATASET_FORMAT = "moda-dataset"
EFFECTIVE_FORMAT = "moda-effective"
VERSION = 1


@dataclass(eq=False)
class Transition:
    state: StateTensor
    action: int
    next_state: StateTensor
    reward: float
    task_id: int

    def __eq__(self, other):
        return (
            isinstance(other, Transition)
            and self.action == other.action
            and self.reward == other.reward
            and self.task_id == other.task_id
            and self.state == other.state
            and self.next_state == other.next_state
        )


@dataclass(eq=False)
class Trajectory:
    transitions: list[Transition]
    task_id: int

    def __post_init__(self):
        if not self.transitions:
            raise DatasetError("a trajectory needs at least one transition")

    def __len__(self):
        return len(self.transitions)

    def __eq__(self, other):
        return (
            isinstance(other, Trajectory)
            and self.task_id == other.task_id
            and self.transitions == other.transitions
        )


@dataclass(eq=False)
class SubTrajectory:
    """A window of consecutive transitions with provenance into its dataset."""

    transitions: tuple[Transition, ...]
    task_id: int
    trajectory_id: int
    start: int

    def __eq__(self, other):
        return (
            isinstance(other, SubTrajectory)
            and self.task_id == other.task_id
            and self.trajectory_id == other.trajectory_id
            and self.start == other.start
            and list(self.transitions) == list(other.transitions)
        )


@dataclass(eq=False)
class MultiTaskDataset:
    grid: GridSpec
    per_task: list[list[Trajectory]]

    @property
    def n_tasks(self) -> int:
        return len(self.per_task)

    def task_transitions(self, task_id: int) -> list[Transition]:
        return [tr for traj in self.per_task[task_id] for tr in traj.transitions]

    def __eq__(self, other):
        return (
            isinstance(other, MultiTaskDataset)
            and self.grid == other.grid
            and self.per_task == other.per_task
        )


@dataclass(eq=False)
class EffectiveDataset:
    """A target task's own windows plus the windows shared into it."""

    target_task: int
    own: list[SubTrajectory]
    shared: list[SubTrajectory]
    strategy: str = "contrastive"
    transitions: list[Transition] = field(default_factory=list)

    def __post_init__(self):
        if not self.transitions:
            self.transitions = flatten_windows(self.own) + flatten_windows(self.shared)

    @property
    def shared_transition_count(self) -> int:
        return sum(len(s.transitions) for s in self.shared)

    def __eq__(self, other):
        return (
            isinstance(other, EffectiveDataset)
            and self.target_task == other.target_task
            and self.strategy == other.strategy
            and self.own == other.own
            and self.shared == other.shared
        )


def partition(trajectory: Trajectory, window: int, trajectory_id: int = 0):
    """Non-overlapping windows from the start; a short remainder is dropped."""
    if window < 1:
        raise DatasetError(f"window must be positive, got {window}")
    out = []
    ts = trajectory.transitions
    for start in range(0, len(ts) - window + 1, window):
        out.append(
            SubTrajectory(
                tuple(ts[start : start + window]),
                trajectory.task_id,
                trajectory_id,
                start,
            )
        )
    return out


def partition_task(trajectories: list[Trajectory], window: int):
    return [
        sub
        for tid, traj in enumerate(trajectories)
        for sub in partition(traj, window, tid)
    ]


def flatten_windows(windows) -> list[Transition]:
    return [tr for sub in windows for tr in sub.transitions]


def flatten(effective: EffectiveDataset) -> list[Transition]:
    """All transitions of the effective dataset, own first then shared."""
    return flatten_windows(effective.own) + flatten_windows(effective.shared)


# -- serialization ---------------------------------------------------------


def _state_record(state: StateTensor) -> dict:
    return {
        "t": state.t,
        "center": [state.center.i, state.center.j],
        "features": state.features.ravel().tolist(),
    }


def _state_from_record(rec: dict, grid: GridSpec) -> StateTensor:
    feats = np.array(rec["features"], dtype=np.float64)
    expected = grid.features * grid.patch * grid.patch
    if feats.size != expected:
        raise DatasetError(
            f"state record has {feats.size} features, expected {expected}"
        )
    return StateTensor(
        feats.reshape(grid.features, grid.patch, grid.patch),
        int(rec["t"]),
        CellIndex(int(rec["center"][0]), int(rec["center"][1])),
    )


def _transition_records(transitions) -> list[dict]:
    recs = []
    for tr in transitions:
        rec = _state_record(tr.state)
        rec["action"] = tr.action
        rec["reward"] = tr.reward
        recs.append(rec)
    recs.append(_state_record(transitions[-1].next_state))
    return recs


def _transitions_from_records(recs: list[dict], grid: GridSpec, task_id: int):
    if len(recs) < 2:
        raise DatasetError("a trajectory record needs at least two states")
    states = [_state_from_record(r, grid) for r in recs]
    out = []
    for k, rec in enumerate(recs[:-1]):
        if "action" not in rec or "reward" not in rec:
            raise DatasetError(f"state record {k} is missing action or reward")
        action = int(rec["action"])
        nxt = states[k + 1]
        expected_t = states[k].t if action == TERMINATE else states[k].t + 1
        if nxt.t != expected_t:
            raise DatasetError(
                f"inconsistent time slots: record {k} (t={states[k].t}, "
                f"action={action}) followed by t={nxt.t}"
            )
        out.append(Transition(states[k], action, nxt, float(rec["reward"]), task_id))
    return out


def _grid_header(grid: GridSpec) -> dict:
    return {
        "rows": grid.rows,
        "cols": grid.cols,
        "patch": grid.patch,
        "features": grid.features,
        "horizon": grid.horizon,
        "feature_names": list(grid.feature_names),
    }


def _grid_from_header(h: dict) -> GridSpec:
    return GridSpec(
        h["rows"], h["cols"], h["patch"], h["features"], h["horizon"],
        tuple(h.get("feature_names", ())),
    )


def save_dataset(dataset: MultiTaskDataset, path) -> None:
    header = {
        "format": DATASET_FORMAT,
        "version": VERSION,
        "grid": _grid_header(dataset.grid),
        "n_tasks": dataset.n_tasks,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for task_id, trajectories in enumerate(dataset.per_task):
            for traj in trajectories:
                line = {
                    "task_id": task_id,
                    "transitions": _transition_records(traj.transitions),
                }
                fh.write(json.dumps(line) + "\n")


def _read_header(path, expected_format: str) -> tuple[dict, list[str]]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    if not lines:
        raise DatasetError(f"{path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: malformed header: {e}") from e
    if not isinstance(header, dict) or header.get("format") != expected_format:
        raise DatasetError(f"{path} is not a {expected_format} file")
    if header.get("version") != VERSION:
        raise DatasetError(f"{path}: unsupported version {header.get('version')!r}")
    return header, lines[1:]


def load_dataset(path) -> MultiTaskDataset:
    header, lines = _read_header(path, DATASET_FORMAT)
    grid = _grid_from_header(header["grid"])
    n_tasks = int(header["n_tasks"])
    per_task: list[list[Trajectory]] = [[] for _ in range(n_tasks)]
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}:{lineno}: truncated or malformed line: {e}") from e
        task_id = int(rec["task_id"])
        if not 0 <= task_id < n_tasks:
            raise DatasetError(f"{path}:{lineno}: task id {task_id} out of range")
        transitions = _transitions_from_records(rec["transitions"], grid, task_id)
        per_task[task_id].append(Trajectory(transitions, task_id))
    return MultiTaskDataset(grid, per_task)


def save_effective(effective: EffectiveDataset, grid: GridSpec, path) -> None:
    header = {
        "format": EFFECTIVE_FORMAT,
        "version": VERSION,
        "grid": _grid_header(grid),
        "target_task": effective.target_task,
        "strategy": effective.strategy,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for kind, subs in (("own", effective.own), ("shared", effective.shared)):
            for sub in subs:
                line = {
                    "kind": kind,
                    "task_id": sub.task_id,
                    "trajectory": sub.trajectory_id,
                    "start": sub.start,
                    "transitions": _transition_records(sub.transitions),
                }
                fh.write(json.dumps(line) + "\n")


def load_effective(path) -> tuple[EffectiveDataset, GridSpec]:
    header, lines = _read_header(path, EFFECTIVE_FORMAT)
    grid = _grid_from_header(header["grid"])
    own: list[SubTrajectory] = []
    shared: list[SubTrajectory] = []
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}:{lineno}: truncated or malformed line: {e}") from e
        transitions = _transitions_from_records(
            rec["transitions"], grid, int(rec["task_id"])
        )
        sub = SubTrajectory(
            tuple(transitions), int(rec["task_id"]), int(rec["trajectory"]),
            int(rec["start"]),
        )
        if rec["kind"] == "own":
            own.append(sub)
        elif rec["kind"] == "shared":
            shared.append(sub)
        else:
            raise DatasetError(f"{path}:{lineno}: unknown kind {rec['kind']!r}")
    eff = EffectiveDataset(
        int(header["target_task"]), own, shared,
        strategy=str(header.get("strategy", "contrastive")),
    )
    return eff, grid
