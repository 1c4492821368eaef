"""Experiment runners: full pipeline, comparisons and sweeps.

Each runner writes one results.csv under the output directory plus a config
snapshot keyed by the config hash.  Cells run sequentially; determinism
comes from the per-stage seed derivation in stages.py.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from moda import contrastive as ctr
from moda import datasets as ds
from moda import worldmodel as wm
from moda.errors import ConfigError
from moda.harness import config as cfgmod
from moda.harness import stages
from moda.harness.results import ResultRow, emit_results
from moda.sac import train_policy


def _task_ids(cfg, tasks=None) -> list[int]:
    all_ids = [t["id"] for t in sorted(cfg["env"]["tasks"], key=lambda t: t["id"])]
    if tasks is None:
        return all_ids
    bad = [t for t in tasks if t not in all_ids]
    if bad:
        raise ConfigError(f"unknown task ids {bad}; config defines {all_ids}")
    return list(tasks)


def scarce_task(cfg) -> int:
    """The task with the fewest behavior trajectories."""
    counts = cfg["data"]["trajectories"]
    return int(np.argmin(counts))


def run_pipeline(cfg: dict, out, seed: int, tasks=None,
                 strategy: str = "contrastive",
                 variants=("moda",)) -> list[ResultRow]:
    """All stages end to end for the selected tasks; returns the result rows."""
    stages.write_config_snapshot(cfg, out)
    run_dir = stages.run_dir_for(out, seed)
    stages.run_gen_data(cfg, run_dir, seed)
    rows = []
    for task in _task_ids(cfg, tasks):
        if strategy == "contrastive":
            stages.run_train_contrastive(cfg, run_dir, seed, task)
        stages.run_share(cfg, run_dir, seed, task, strategy)
        stages.run_train_world(cfg, run_dir, seed, task, strategy)
        for variant in variants:
            stages.run_train_policy(cfg, run_dir, seed, task, strategy, variant)
            rows.append(stages.run_evaluate(cfg, run_dir, seed, task, strategy, variant))
    emit_results(rows, Path(out) / "results.csv")
    return rows


def run_variant_comparison(cfg: dict, out, tasks=None) -> list[ResultRow]:
    """Gated vs ungated policy training for every task profile and seed."""
    stages.write_config_snapshot(cfg, out)
    rows = []
    for seed in cfg["evaluation"]["seeds"]:
        run_dir = stages.run_dir_for(out, seed)
        stages.ensure_dataset(cfg, run_dir, seed)
        for task in _task_ids(cfg, tasks):
            stages.ensure_world(cfg, run_dir, seed, task, "contrastive")
            for variant in stages.VARIANTS:
                stages.ensure_policy(cfg, run_dir, seed, task, "contrastive", variant)
                rows.append(
                    stages.run_evaluate(cfg, run_dir, seed, task, "contrastive", variant)
                )
    emit_results(rows, Path(out) / "results.csv")
    return rows


def run_sharing_comparison(cfg: dict, out, target: int | None = None) -> list[ResultRow]:
    """The four sharing strategies on the scarce target task."""
    stages.write_config_snapshot(cfg, out)
    task = scarce_task(cfg) if target is None else target
    rows = []
    for seed in cfg["evaluation"]["seeds"]:
        run_dir = stages.run_dir_for(out, seed)
        stages.ensure_dataset(cfg, run_dir, seed)
        for strategy in ctr.STRATEGIES:
            stages.ensure_policy(cfg, run_dir, seed, task, strategy, "moda")
            rows.append(
                stages.run_evaluate(cfg, run_dir, seed, task, strategy, "moda")
            )
    emit_results(rows, Path(out) / "results.csv")
    return rows


def _count_cell(cfg, run_dir, seed, task, count):
    """Train world model and policy on own windows plus a fixed budget of
    shared transitions, topping up from unshared other-task data."""
    eff, grid = ds.load_effective(
        stages.effective_path(run_dir, task, "contrastive")
    )
    dataset = ds.load_dataset(stages.dataset_path(run_dir))
    window = cfgmod.sharing_config_from(cfg).window
    own = ds.flatten_windows(eff.own)
    shared = ds.flatten_windows(eff.shared)
    shared_keys = {(s.task_id, s.trajectory_id, s.start) for s in eff.shared}
    unshared = [
        tr
        for task_id in range(dataset.n_tasks)
        if task_id != task
        for sub in ds.partition_task(dataset.per_task[task_id], window)
        if (sub.task_id, sub.trajectory_id, sub.start) not in shared_keys
        for tr in sub.transitions
    ]
    rng = stage_rng_for_count(seed, task, count)
    picked: list = []
    if count > 0:
        if count <= len(shared):
            idx = rng.permutation(len(shared))[:count]
            picked = [shared[i] for i in idx]
        else:
            picked = list(shared)
            need = min(count - len(shared), len(unshared))
            idx = rng.permutation(len(unshared))[:need]
            picked += [unshared[i] for i in idx]
    transitions = own + picked
    tag = f"count{count}"
    stages._train_world_on(cfg, run_dir, seed, task, tag, transitions, grid)
    dyn, disc = stages._load_world(cfg, run_dir, seed, task, tag, grid)
    mdp = stages.make_robust_mdp(cfg, dyn, disc, transitions, grid, "moda")
    policy, diag = train_policy(mdp, cfgmod.sac_config_from(cfg),
                                stages.stage_rng(seed, "policy", task))
    policy.save(stages.policy_path(run_dir, task, tag, "moda"))
    return stages.run_evaluate(cfg, run_dir, seed, task, tag, "moda",
                               strategy_label="contrastive",
                               shared_count=len(picked))


def stage_rng_for_count(seed, task, count):
    return np.random.default_rng([seed, stages.STAGE_CODES["share"], task, count])


def run_shared_count_sweep(cfg: dict, out, counts, targets=None) -> list[ResultRow]:
    """Retrain with fixed shared-transition budgets; rows keyed by the
    shared_transitions column."""
    stages.write_config_snapshot(cfg, out)
    if targets is None:
        tasks = cfgmod.build_tasks(cfg)
        expert = max(tasks, key=lambda t: t.expertise).task_id
        random_ = min(tasks, key=lambda t: t.expertise).task_id
        targets = [expert, random_] if expert != random_ else [expert]
    rows = []
    for seed in cfg["evaluation"]["seeds"]:
        run_dir = stages.run_dir_for(out, seed)
        stages.ensure_dataset(cfg, run_dir, seed)
        for task in _task_ids(cfg, targets):
            stages.ensure_share(cfg, run_dir, seed, task, "contrastive")
            for count in counts:
                rows.append(_count_cell(cfg, run_dir, seed, task, count))
    emit_results(rows, Path(out) / "results.csv")
    return rows


def run_sweep(cfg: dict, key: str, values, out, tasks=None,
              seed: int | None = None) -> list[ResultRow]:
    """Grid over one config key; one result group per value, all in one CSV."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for k, value in enumerate(values):
        patched = cfgmod.set_key(cfg, key, value)
        sub_out = Path(out) / f"sweep{k}"
        rows.extend(
            run_pipeline(patched, sub_out,
                         seed if seed is not None else patched["seed"], tasks)
        )
        stages.write_config_snapshot(patched, out)
    emit_results(rows, Path(out) / "results.csv")
    return rows
