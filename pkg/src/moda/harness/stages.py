"""Pipeline stages with file artifacts.

Every stage derives its random state from (pipeline seed, stage code, task),
so rerunning any stage from its inputs reproduces byte-identical outputs and
world models are shared across policy variants.  Artifacts live under
``<out>/seed<K>/``; loss curves go to ``<out>/seed<K>/logs/``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from moda import contrastive as ctr
from moda import datasets as ds
from moda import worldmodel as wm
from moda.errors import ConfigError, HarnessError
from moda.harness import config as cfgmod
from moda.harness.results import ResultRow
from moda.sac import Policy, train_policy

STAGE_CODES = {"data": 11, "contrastive": 23, "share": 31, "world": 37,
               "policy": 41, "evaluate": 53}
VARIANTS = ("moda", "moda_minus")


def stage_rng(seed: int, stage: str, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, STAGE_CODES[stage], *tags])


def run_dir_for(out, seed: int) -> Path:
    d = Path(out) / f"seed{seed}"
    (d / "logs").mkdir(parents=True, exist_ok=True)
    return d


def dataset_path(run_dir) -> Path:
    return Path(run_dir) / "dataset.jsonl"


def contrastive_path(run_dir, task: int) -> Path:
    return Path(run_dir) / f"contrastive_task{task}.json"


def effective_path(run_dir, task: int, tag: str) -> Path:
    return Path(run_dir) / f"effective_task{task}_{tag}.jsonl"


def dynamics_path(run_dir, task: int, tag: str) -> Path:
    return Path(run_dir) / f"dynamics_task{task}_{tag}.json"


def generator_path(run_dir, task: int, tag: str) -> Path:
    return Path(run_dir) / f"generator_task{task}_{tag}.json"


def discriminator_path(run_dir, task: int, tag: str) -> Path:
    return Path(run_dir) / f"discriminator_task{task}_{tag}.json"


def policy_path(run_dir, task: int, tag: str, variant: str) -> Path:
    return Path(run_dir) / f"policy_task{task}_{tag}_{variant}.json"


def require(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise HarnessError(f"missing artifact {path} (run `{producer}` first)")
    return Path(path)


def _write_curve(path: Path, header: str, values) -> None:
    lines = [header] + [f"{k + 1},{v!r}" for k, v in enumerate(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_config_snapshot(cfg: dict, out) -> str:
    import json

    h = cfgmod.config_hash(cfg)
    Path(out).mkdir(parents=True, exist_ok=True)
    snap = Path(out) / f"config_{h[:12]}.json"
    if not snap.exists():
        snap.write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    return h


# -- stages ------------------------------------------------------------------


def run_gen_data(cfg: dict, run_dir, seed: int) -> Path:
    """Generate behavior trajectories for every task and store the dataset."""
    env = cfgmod.build_env_from_config(cfg)
    counts = cfg["data"]["trajectories"]
    max_len = cfg["data"]["max_len"] or env.grid.horizon
    per_task = []
    for task in env.tasks:
        per_task.append(
            env.generate_trajectories(
                task, counts[task.task_id], max_len,
                seed=[seed, STAGE_CODES["data"], task.task_id],
            )
        )
    path = dataset_path(run_dir)
    ds.save_dataset(ds.MultiTaskDataset(env.grid, per_task), path)
    return path


def run_train_contrastive(cfg: dict, run_dir, seed: int, task: int) -> Path:
    dataset = ds.load_dataset(require(dataset_path(run_dir), "gen-data"))
    share_cfg = cfgmod.sharing_config_from(cfg)
    rng = stage_rng(seed, "contrastive", task)
    net = ctr.ContrastiveNet(dataset.grid, share_cfg, rng)
    triplets = ctr.mine_triplets(dataset, task, share_cfg, rng)
    curve = ctr.train_contrastive(net, triplets, rng)
    path = contrastive_path(run_dir, task)
    net.save(path)
    _write_curve(Path(run_dir) / "logs" / f"contrastive_task{task}.csv",
                 "epoch,loss", curve)
    return path


def run_share(cfg: dict, run_dir, seed: int, task: int, strategy: str) -> Path:
    if strategy not in ctr.STRATEGIES:
        raise ConfigError(
            f"unknown sharing strategy {strategy!r}; expected one of {ctr.STRATEGIES}"
        )
    dataset = ds.load_dataset(require(dataset_path(run_dir), "gen-data"))
    share_cfg = cfgmod.sharing_config_from(cfg)
    if strategy == "contrastive":
        net = ctr.ContrastiveNet(dataset.grid, share_cfg,
                                 stage_rng(seed, "contrastive", task))
        net.load(require(contrastive_path(run_dir, task), "train-contrastive"))
        eff = ctr.share(net, dataset, task)
    else:
        eff = ctr.share_baseline(strategy, dataset, task, share_cfg.window)
    path = effective_path(run_dir, task, strategy)
    ds.save_effective(eff, dataset.grid, path)
    return path


def _train_world_on(cfg: dict, run_dir, seed: int, task: int, tag: str,
                    transitions: list, grid) -> tuple[Path, Path, Path]:
    w = cfg["world"]
    rng = stage_rng(seed, "world", task)
    dyn = wm.DynamicsModel(grid, w["hidden"], rng)
    dyn_curve, _ = wm.train_dynamics(dyn, transitions, w["dyn_epochs"],
                                     w["batch"], w["lr_dyn"], rng)
    gen = wm.Generator(grid, w["z_dim"], w["hidden"], rng)
    disc = wm.Discriminator(grid, w["hidden"], rng)
    d_curve, g_curve = wm.train_gan(gen, disc, transitions, w["gan_epochs"],
                                    w["batch"], w["lr_g"], w["lr_d"], rng)
    dp, gp, cp = (dynamics_path(run_dir, task, tag),
                  generator_path(run_dir, task, tag),
                  discriminator_path(run_dir, task, tag))
    dyn.save(dp)
    gen.save(gp)
    disc.save(cp)
    logs = Path(run_dir) / "logs"
    _write_curve(logs / f"dynamics_task{task}_{tag}.csv", "epoch,loss", dyn_curve)
    _write_curve(logs / f"discriminator_task{task}_{tag}.csv", "epoch,loss", d_curve)
    _write_curve(logs / f"generator_task{task}_{tag}.csv", "epoch,loss", g_curve)
    return dp, gp, cp


def run_train_world(cfg: dict, run_dir, seed: int, task: int, strategy: str):
    eff, grid = ds.load_effective(
        require(effective_path(run_dir, task, strategy), "share")
    )
    return _train_world_on(cfg, run_dir, seed, task, strategy, eff.transitions, grid)


def _load_world(cfg: dict, run_dir, seed: int, task: int, tag: str, grid):
    w = cfg["world"]
    rng = stage_rng(seed, "world", task)
    dyn = wm.DynamicsModel(grid, w["hidden"], rng)
    dyn.load(require(dynamics_path(run_dir, task, tag), "train-world"))
    disc = wm.Discriminator(grid, w["hidden"], rng)
    disc.load(require(discriminator_path(run_dir, task, tag), "train-world"))
    return dyn, disc


def make_robust_mdp(cfg: dict, dyn, disc, transitions, grid,
                    variant: str) -> wm.RobustMdp:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    w = cfg["world"]
    threshold = 0.0 if variant == "moda_minus" else w["threshold"]
    pool = [tr.state for tr in transitions]
    return wm.RobustMdp(dyn, disc, pool, threshold, w["penalty"], grid)


def run_train_policy(cfg: dict, run_dir, seed: int, task: int, tag: str,
                     variant: str) -> Path:
    eff, grid = ds.load_effective(require(effective_path(run_dir, task, tag), "share"))
    dyn, disc = _load_world(cfg, run_dir, seed, task, tag, grid)
    mdp = make_robust_mdp(cfg, dyn, disc, eff.transitions, grid, variant)
    policy, diag = train_policy(mdp, cfgmod.sac_config_from(cfg),
                                stage_rng(seed, "policy", task))
    path = policy_path(run_dir, task, tag, variant)
    policy.save(path)
    _write_curve(Path(run_dir) / "logs" / f"policy_task{task}_{tag}_{variant}.csv",
                 "episode,return", diag["episode_returns"])
    return path


def run_evaluate(cfg: dict, run_dir, seed: int, task: int, tag: str,
                 variant: str, strategy_label: str | None = None,
                 shared_count: int | None = None) -> ResultRow:
    """Roll out a trained policy in the ground-truth env; one result row.

    The policy is deployed greedily (argmax action); the entropy bonus only
    regularizes training.
    """
    env = cfgmod.build_env_from_config(cfg)
    policy = Policy.load(require(policy_path(run_dir, task, tag, variant),
                                 "train-policy"))
    if shared_count is None:
        eff, _ = ds.load_effective(require(effective_path(run_dir, task, tag), "share"))
        shared_count = eff.shared_transition_count
    mean, std = env.evaluate_policy(
        env.tasks[task],
        lambda state, rng: policy.act(state, rng, deterministic=True),
        cfg["evaluation"]["rollouts"],
        seed=[seed, STAGE_CODES["evaluate"], task],
    )
    return ResultRow(task, strategy_label or tag, variant, seed, mean, std,
                     shared_count, cfgmod.config_hash(cfg))


def evaluate_behavior(cfg: dict, seed: int, task: int) -> ResultRow:
    """Roll out the behavior policy itself; no trained artifacts required."""
    env = cfgmod.build_env_from_config(cfg)
    spec = env.tasks[task]
    mean, std = env.evaluate_policy(
        spec, env.behavior_policy(spec), cfg["evaluation"]["rollouts"],
        seed=[seed, STAGE_CODES["evaluate"], task],
    )
    return ResultRow(task, "none", "behavior", seed, mean, std, 0,
                     cfgmod.config_hash(cfg))


# -- ensure helpers (skip work whose artifact already exists) ----------------


def ensure_dataset(cfg, run_dir, seed) -> Path:
    path = dataset_path(run_dir)
    return path if path.exists() else run_gen_data(cfg, run_dir, seed)


def ensure_contrastive(cfg, run_dir, seed, task) -> Path:
    path = contrastive_path(run_dir, task)
    return path if path.exists() else run_train_contrastive(cfg, run_dir, seed, task)


def ensure_share(cfg, run_dir, seed, task, strategy) -> Path:
    path = effective_path(run_dir, task, strategy)
    if path.exists():
        return path
    if strategy == "contrastive":
        ensure_contrastive(cfg, run_dir, seed, task)
    return run_share(cfg, run_dir, seed, task, strategy)


def ensure_world(cfg, run_dir, seed, task, strategy):
    paths = (dynamics_path(run_dir, task, strategy),
             generator_path(run_dir, task, strategy),
             discriminator_path(run_dir, task, strategy))
    if all(p.exists() for p in paths):
        return paths
    ensure_share(cfg, run_dir, seed, task, strategy)
    return run_train_world(cfg, run_dir, seed, task, strategy)


def ensure_policy(cfg, run_dir, seed, task, strategy, variant) -> Path:
    path = policy_path(run_dir, task, strategy, variant)
    if path.exists():
        return path
    ensure_world(cfg, run_dir, seed, task, strategy)
    return run_train_policy(cfg, run_dir, seed, task, strategy, variant)
