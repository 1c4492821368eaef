"""Pipeline configuration: JSON with defaults, validation and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np

from moda.errors import ConfigError
from moda.contrastive import SharingConfig
from moda.gridsim import GridSpec, GroundTruthEnv, TaskSpec, build_env
from moda.sac import SacConfig

DEFAULTS = {
    "env": {
        "grid": {
            "rows": 12,
            "cols": 12,
            "patch": 5,
            "features": 5,
            "horizon": 48,
            "feature_names": [],
        },
        "tasks": [],
        "step_cost": 0.05,
        "seed": 7,
    },
    "data": {
        "trajectories": [],
        "max_len": 0,
    },
    "contrastive": {
        "w": 3,
        "lambda": 3,
        "margin": 1.0,
        "dim": 32,
        "rho": 2,
        "sample_fraction": 0.15,
        "epochs": 500,
        "batch": 32,
        "lr": 1e-3,
        "channels": 16,
    },
    "world": {
        "dyn_epochs": 500,
        "gan_epochs": 500,
        "lr_dyn": 1e-3,
        "lr_g": 5e-4,
        "lr_d": 2e-4,
        "threshold": 0.5,
        "penalty": -1.0,
        "z_dim": 32,
        "hidden": 128,
        "batch": 32,
    },
    "sac": {
        "episodes": 2000,
        "batch": 64,
        "discount": 0.99,
        "tau": 0.005,
        "alpha": 0.2,
        "lr_actor": 3e-4,
        "lr_critic": 3e-4,
        "buffer": 50000,
        "warmup": 1000,
        "hidden": 128,
        "twin": True,
    },
    "evaluation": {
        "rollouts": 20,
        "seeds": [0, 1, 2],
    },
    "seed": 0,
}

_TASK_KEYS = {"id", "weights", "expertise", "terminate_bonus"}


def _merge(defaults, override, path=""):
    if not isinstance(override, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict):
            merged[key] = _merge(defaults[key], value, here)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    cfg = _merge(DEFAULTS, raw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    tasks = cfg["env"]["tasks"]
    if not tasks:
        raise ConfigError("env.tasks must list at least one task")
    n = cfg["env"]["grid"]["features"]
    for k, task in enumerate(tasks):
        extra = set(task) - _TASK_KEYS
        missing = _TASK_KEYS - set(task)
        if extra or missing:
            raise ConfigError(
                f"env.tasks[{k}]: missing keys {sorted(missing)}, unknown {sorted(extra)}"
            )
        if len(task["weights"]) != n:
            raise ConfigError(
                f"env.tasks[{k}].weights needs {n} entries, got {len(task['weights'])}"
            )
    ids = sorted(t["id"] for t in tasks)
    if ids != list(range(len(tasks))):
        raise ConfigError(f"env.tasks ids must be 0..{len(tasks) - 1}, got {ids}")
    counts = cfg["data"]["trajectories"]
    if len(counts) != len(tasks):
        raise ConfigError(
            f"data.trajectories needs one count per task ({len(tasks)}), got {len(counts)}"
        )
    if any(c < 1 for c in counts):
        raise ConfigError("data.trajectories entries must be positive")
    if cfg["data"]["max_len"] < 0:
        raise ConfigError("data.max_len must be non-negative (0 means horizon)")
    if not cfg["evaluation"]["seeds"]:
        raise ConfigError("evaluation.seeds must not be empty")
    if cfg["evaluation"]["rollouts"] < 1:
        raise ConfigError("evaluation.rollouts must be positive")
    if not 0.0 <= cfg["world"]["threshold"] <= 1.0:
        raise ConfigError("world.threshold must be in [0, 1]")
    # constructing the typed configs surfaces the remaining field errors
    build_grid(cfg)
    build_tasks(cfg)
    sharing_config_from(cfg)
    sac_config_from(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def set_key(cfg: dict, dotted: str, value) -> dict:
    """Return a copy of cfg with a dotted key replaced (for sweeps)."""
    out = copy.deepcopy(cfg)
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value
    validate_config(out)
    return out


def build_grid(cfg: dict) -> GridSpec:
    g = cfg["env"]["grid"]
    return GridSpec(
        g["rows"], g["cols"], g["patch"], g["features"], g["horizon"],
        tuple(g.get("feature_names") or ()),
    )


def build_tasks(cfg: dict) -> list[TaskSpec]:
    tasks = sorted(cfg["env"]["tasks"], key=lambda t: t["id"])
    return [
        TaskSpec(t["id"], np.array(t["weights"], dtype=np.float64),
                 t["expertise"], t["terminate_bonus"])
        for t in tasks
    ]


def build_env_from_config(cfg: dict) -> GroundTruthEnv:
    return build_env(build_grid(cfg), build_tasks(cfg), cfg["env"]["step_cost"],
                     cfg["env"]["seed"])


def sharing_config_from(cfg: dict) -> SharingConfig:
    c = cfg["contrastive"]
    return SharingConfig(
        window=c["w"],
        positive_range=c["lambda"],
        margin=c["margin"],
        embed_dim=c["dim"],
        neighbor_radius=c["rho"],
        sample_fraction=c["sample_fraction"],
        epochs=c["epochs"],
        batch=c["batch"],
        lr=c["lr"],
        channels=c["channels"],
    )


def sac_config_from(cfg: dict) -> SacConfig:
    s = cfg["sac"]
    return SacConfig(
        episodes=s["episodes"], batch=s["batch"], discount=s["discount"],
        tau=s["tau"], alpha=s["alpha"], lr_actor=s["lr_actor"],
        lr_critic=s["lr_critic"], buffer=s["buffer"], warmup=s["warmup"],
        hidden=s["hidden"], twin=s["twin"],
    )
