"""End-to-end acceptance suite.

One test per criterion, each printing a single `criterion N (...): PASS/FAIL`
line (run with -s to stream them as they complete).  The desk-scale checks
share one artifact tree for the whole session: comparisons reuse datasets,
shares, worlds and policies through the stage cache, so each model is
trained at most once.  The full suite retrains the pipeline many times and
runs for a few hours on a single core; everything in it is deterministic.
"""
from __future__ import annotations

import copy
import time
from pathlib import Path

import numpy as np
import pytest

from moda import contrastive as ctr
from moda import datasets as ds
from moda import worldmodel as wm
from moda.errors import SharingError
from moda.gridsim import ACTION_DELTAS, TERMINATE, CellIndex, StateTensor
from moda.harness import config as cfgmod
from moda.harness import stages
from moda.harness.config import load_config
from moda.harness.experiments import (
    run_pipeline,
    run_shared_count_sweep,
    run_sharing_comparison,
    run_variant_comparison,
    scarce_task,
)
from moda.nnkit import (
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    Network,
    ReLU,
    Sigmoid,
    max_relative_error,
    numerical_gradients,
)
from moda.nnkit.losses import mse

CONFIG_PATH = Path(__file__).resolve().parents[1] / "configs" / "desk.json"


def _report(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {num:2d} ({name}): {'PASS' if ok else 'FAIL'} - {detail}"
    print(line, flush=True)
    assert ok, line


def _seed_avg(rows, key):
    groups: dict = {}
    for r in rows:
        groups.setdefault(key(r), []).append(r.mean_return)
    return {g: float(np.mean(v)) for g, v in sorted(groups.items())}


@pytest.fixture(scope="session")
def desk_cfg():
    return load_config(CONFIG_PATH)


@pytest.fixture(scope="session")
def acc_out(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def expertise_order(desk_cfg):
    """Task ids sorted from most to least expert behavior."""
    tasks = cfgmod.build_tasks(desk_cfg)
    ranked = sorted(tasks, key=lambda t: -t.expertise)
    return [t.task_id for t in ranked]


@pytest.fixture(scope="session")
def variant_rows(desk_cfg, acc_out):
    return run_variant_comparison(desk_cfg, acc_out)


@pytest.fixture(scope="session")
def sharing_rows(desk_cfg, acc_out, variant_rows):
    return run_sharing_comparison(desk_cfg, acc_out)


@pytest.fixture(scope="session")
def count_rows(desk_cfg, acc_out, variant_rows):
    return run_shared_count_sweep(desk_cfg, acc_out, (0, 500, 1000, 2000))


# --- 1: analytic gradients against central differences ---------------------

def _small_network(k: int, rng: np.random.Generator):
    """One of five templates with randomized sizes; returns (net, input)."""
    kind = k % 5
    if kind == 0:
        d_in, h, d_out = rng.integers(3, 7), rng.integers(4, 9), rng.integers(2, 5)
        net = Network([Dense(d_in, h, rng), ReLU(), Dense(h, d_out, rng)])
        x = rng.standard_normal((4, d_in))
    elif kind == 1:
        d_in, h, d_out = rng.integers(3, 6), rng.integers(3, 7), rng.integers(1, 4)
        net = Network([Dense(d_in, h, rng), Sigmoid(), Dense(h, d_out, rng)])
        x = rng.standard_normal((3, d_in))
    elif kind == 2:
        c_in, c_out = rng.integers(1, 3), rng.integers(2, 4)
        net = Network([Conv2d(c_in, c_out, 3, rng), ReLU(), GlobalAvgPool(),
                       Dense(c_out, 3, rng)])
        x = rng.standard_normal((2, c_in, 4, 4))
    elif kind == 3:
        c_in, c_mid = rng.integers(1, 3), rng.integers(1, 3)
        net = Network([Conv2d(c_in, c_mid, 3, rng), Sigmoid(),
                       Conv2d(c_mid, 2, 3, rng), GlobalAvgPool(), Dense(2, 2, rng)])
        x = rng.standard_normal((2, c_in, 5, 5))
    else:
        c_in = rng.integers(1, 3)
        net = Network([Conv2d(c_in, 2, 3, rng), ReLU(), Flatten(),
                       Dense(2 * 4 * 4, 3, rng)])
        x = rng.standard_normal((2, c_in, 4, 4))
    return net, x


def test_criterion_01_gradient_fidelity():
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst = 0.0
    for k in range(10):
        net, x = _small_network(k, rng)
        target = rng.standard_normal(net.forward(x).shape)

        def loss_fn():
            loss, _ = mse(net.forward(x), target)
            return loss

        _, grad = mse(net.forward(x), target)
        net.backward(grad)
        analytic = [g.copy() for g in net.grads()]
        numeric = numerical_gradients(loss_fn, net.params(), h=1e-4)
        worst = max(worst, max_relative_error(analytic, numeric))
    elapsed = time.time() - t0
    ok = worst <= 1e-4 and elapsed < 30.0
    _report(1, "gradient fidelity", ok,
            f"max rel err {worst:.2e} over 10 networks in {elapsed:.1f}s")


# --- 2: sharing rule against a brute-force oracle ---------------------------

def _brute_force_share(anchors, candidates):
    """Independent pure-python mean/variance/distance computation."""
    m, d = len(anchors), len(anchors[0])
    mu = [sum(a[k] for a in anchors) / m for k in range(d)]
    var = sum(sum((a[k] - mu[k]) ** 2 for k in range(d)) for a in anchors) / m
    return [sum((c[k] - mu[k]) ** 2 for k in range(d)) < var for c in candidates]


def test_criterion_02_sharing_rule_oracle():
    rng = np.random.default_rng(202)
    checked = 0
    for _ in range(100):
        m = int(rng.integers(2, 40))
        n = int(rng.integers(0, 60))
        d = int(rng.integers(2, 16))
        scale = float(10.0 ** rng.uniform(-2, 2))
        anchors = rng.normal(0.0, scale, (m, d))
        cands = rng.normal(0.0, scale, (n, d))
        mu, sigma2 = ctr.sharing_gate(anchors)
        got = list(ctr.share_mask(mu, sigma2, cands))
        want = _brute_force_share(anchors.tolist(), cands.tolist())
        assert got == want, f"mismatch on set with m={m} n={n} d={d}"
        checked += n
    with pytest.raises(SharingError):
        ctr.sharing_gate(rng.standard_normal((1, 8)))
    same = np.tile(rng.standard_normal(8), (6, 1))
    mu, sigma2 = ctr.sharing_gate(same)
    assert sigma2 == 0.0
    near = np.vstack([same[0], same[0] + 1e-12])
    assert not ctr.share_mask(mu, sigma2, near).any()
    _report(2, "sharing-rule oracle", True,
            f"100 random sets match ({checked} candidates); "
            "single-anchor refused, identical anchors share nothing")


# --- 3: similar tasks share, dissimilar ones do not -------------------------

def _selectivity_config(desk_cfg):
    """Three tasks on one field: A and B want the same cells, C the opposite.

    B mirrors A's preferences with plenty of data; C has negated weights and
    near-random behavior so its windows cover the grid about as densely as
    B's.  Sharing for target A should then draw almost entirely from B.
    """
    w = [0.25, 1.0, 0.45, 0.15, 0.35]
    cfg = copy.deepcopy(desk_cfg)
    cfg["env"]["seed"] = 11
    cfg["env"]["tasks"] = [
        {"id": 0, "weights": w, "expertise": 0.7, "terminate_bonus": 0.6},
        {"id": 1, "weights": w, "expertise": 0.7, "terminate_bonus": 0.6},
        {"id": 2, "weights": [-v for v in w], "expertise": 0.05,
         "terminate_bonus": 0.6},
    ]
    cfg["data"] = {"trajectories": [30, 90, 140], "max_len": 24}
    cfgmod.validate_config(cfg)
    return cfg


def test_criterion_03_contrastive_selectivity(desk_cfg, acc_out):
    cfg = _selectivity_config(desk_cfg)
    t0 = time.time()
    fracs = []
    for seed in (0, 1, 2):
        run_dir = stages.run_dir_for(acc_out / "selectivity", seed)
        stages.ensure_dataset(cfg, run_dir, seed)
        stages.ensure_share(cfg, run_dir, seed, 0, "contrastive")
        eff, _ = ds.load_effective(
            stages.effective_path(run_dir, 0, "contrastive"))
        n_b = sum(1 for s in eff.shared if s.task_id == 1)
        n_c = sum(1 for s in eff.shared if s.task_id == 2)
        assert n_b + n_c > 0, f"seed {seed} shared nothing"
        fracs.append(n_b / (n_b + n_c))
    elapsed = time.time() - t0
    frac_b = float(np.mean(fracs))
    ok = frac_b >= 0.70 and (1.0 - frac_b) <= 0.30 and elapsed < 600.0
    _report(3, "contrastive selectivity", ok,
            f"{frac_b:.1%} of shares from the twin task "
            f"(per seed {[f'{f:.2f}' for f in fracs]}) in {elapsed:.0f}s")


# --- 4: the transition detector separates real from corrupted ---------------

def test_criterion_04_detector_quality(desk_cfg, acc_out):
    grid = cfgmod.build_grid(desk_cfg)
    env = cfgmod.build_env_from_config(desk_cfg)
    task = scarce_task(desk_cfg)
    spec = cfgmod.build_tasks(desk_cfg)[task]
    nf = grid.features * grid.patch * grid.patch
    aucs = []
    for seed in desk_cfg["evaluation"]["seeds"]:
        run_dir = stages.run_dir_for(acc_out, seed)
        stages.ensure_dataset(desk_cfg, run_dir, seed)
        stages.ensure_world(desk_cfg, run_dir, seed, task, "contrastive")
        disc = wm.Discriminator(grid, desk_cfg["world"]["hidden"],
                                np.random.default_rng(0))
        disc.load(stages.discriminator_path(run_dir, task, "contrastive"))
        trajs = env.generate_trajectories(spec, 40, 24, [seed, 97, task])
        real = wm.transition_vectors(
            [tr for traj in trajs for tr in traj.transitions], grid)
        rng = np.random.default_rng([seed, 99, task])
        corrupted = real.copy()
        block = slice(nf + 10, 2 * nf + 10)
        corrupted[:, block] = corrupted[rng.permutation(len(real)), block]
        aucs.append(wm.detector_auc(disc, real, corrupted))
    mean_auc = float(np.mean(aucs))
    _report(4, "detector quality", mean_auc >= 0.8,
            f"AUC {mean_auc:.3f} (per seed {[f'{a:.3f}' for a in aucs]})")


# --- 5: gate threshold semantics --------------------------------------------

def _load_world(desk_cfg, run_dir, task):
    grid = cfgmod.build_grid(desk_cfg)
    hidden = desk_cfg["world"]["hidden"]
    dyn = wm.DynamicsModel(grid, hidden, np.random.default_rng(0))
    dyn.load(stages.dynamics_path(run_dir, task, "contrastive"))
    disc = wm.Discriminator(grid, hidden, np.random.default_rng(0))
    disc.load(stages.discriminator_path(run_dir, task, "contrastive"))
    return dyn, disc


def _bare_step(dyn, grid, state, action):
    """Dynamics rollout step with no detector in the loop."""
    svec = wm.state_vector(state, grid.horizon)
    pred_next, pred_r = dyn.predict(wm.dynamics_input(svec, np.array([action])))
    reward = float(pred_r[0])
    feats = np.clip(pred_next[0], 0.0, 1.0).reshape(
        grid.features, grid.patch, grid.patch)
    if action == TERMINATE:
        return StateTensor(feats, state.t, state.center), reward, True
    di, dj = ACTION_DELTAS[action]
    center = CellIndex(min(max(state.center.i + di, 1), grid.rows),
                       min(max(state.center.j + dj, 1), grid.cols))
    return StateTensor(feats, state.t + 1, center), reward, state.t + 1 >= grid.horizon


def test_criterion_05_gate_semantics(desk_cfg, acc_out):
    task = scarce_task(desk_cfg)
    run_dir = stages.run_dir_for(acc_out, 0)
    stages.ensure_dataset(desk_cfg, run_dir, 0)
    stages.ensure_world(desk_cfg, run_dir, 0, task, "contrastive")
    grid = cfgmod.build_grid(desk_cfg)
    dyn, disc = _load_world(desk_cfg, run_dir, task)
    eff, _ = ds.load_effective(stages.effective_path(run_dir, task, "contrastive"))
    pool = [tr.state for tr in eff.transitions]
    w = desk_cfg["world"]

    def rollout(threshold, ep):
        mdp = wm.RobustMdp(dyn, disc, pool, threshold, w["penalty"], grid)
        rng = np.random.default_rng([505, ep])
        state, steps, done = mdp.reset(rng), 0, False
        visited = [state]
        while not done:
            state, _, done = mdp.step(state, int(rng.integers(10)))
            visited.append(state)
            steps += 1
        return steps, visited

    # threshold 0: state-identical to a gate-free dynamics rollout
    identical = True
    for ep in range(20):
        steps, visited = rollout(0.0, ep)
        rng = np.random.default_rng([505, ep])
        state = pool[int(rng.integers(len(pool)))].copy()
        bare = [state]
        done = False
        while not done:
            state, _, done = _bare_step(dyn, grid, state, int(rng.integers(10)))
            bare.append(state)
        identical &= len(visited) == len(bare) and all(
            np.array_equal(a.features, b.features)
            and a.t == b.t and a.center == b.center
            for a, b in zip(visited, bare))
    # threshold 1: every episode ends on its first step
    all_one = all(rollout(1.0, ep)[0] == 1 for ep in range(30))
    # monotonicity: per-episode length is non-increasing in the threshold
    thresholds = (0.0, 0.25, 0.5, 0.75, 1.0)
    mono = True
    for ep in range(30):
        lengths = [rollout(th, ep)[0] for th in thresholds]
        mono &= all(b <= a for a, b in zip(lengths, lengths[1:]))
    ok = identical and all_one and mono
    _report(5, "gate semantics", ok,
            f"threshold-0 identical {identical}, threshold-1 single-step "
            f"{all_one}, monotone {mono}")


# --- 6: gating beats no gating; learned policies beat their data ------------

def test_criterion_06_variant_ordering(desk_cfg, variant_rows, expertise_order):
    by_tv = _seed_avg(variant_rows, lambda r: (r.task_id, r.variant))
    tasks = sorted({r.task_id for r in variant_rows})
    moda = float(np.mean([by_tv[(t, "moda")] for t in tasks]))
    minus = float(np.mean([by_tv[(t, "moda_minus")] for t in tasks]))
    seeds = desk_cfg["evaluation"]["seeds"]
    behavior = {
        t: float(np.mean(
            [stages.evaluate_behavior(desk_cfg, s, t).mean_return for s in seeds]))
        for t in tasks
    }
    medium, random_ = expertise_order[1], expertise_order[2]
    margin_ok = all(by_tv[(t, "moda")] >= 1.2 * behavior[t]
                    for t in (medium, random_))
    ok = moda > minus and margin_ok
    _report(6, "gated vs ungated ordering", ok,
            f"profile means {moda:.2f} vs {minus:.2f}; "
            f"medium/random policies vs behavior: "
            + ", ".join(f"{by_tv[(t, 'moda')]:.2f}/{behavior[t]:.2f}"
                        for t in (medium, random_)))


# --- 7: contrastive sharing beats the baseline strategies -------------------

def test_criterion_07_sharing_ordering(desk_cfg, sharing_rows):
    by_strategy = _seed_avg(sharing_rows, lambda r: r.strategy)
    target = scarce_task(desk_cfg)
    ok = all(by_strategy["contrastive"] >= by_strategy[s]
             for s in ("none", "all", "uds"))
    _report(7, "sharing-strategy ordering", ok,
            f"task {target}: " + ", ".join(
                f"{s} {by_strategy[s]:.2f}" for s in ("contrastive", "none",
                                                      "all", "uds")))


# --- 8: experts want fewer shared transitions than random drivers -----------

def test_criterion_08_shared_count_ordering(count_rows, expertise_order):
    by_tc = _seed_avg(count_rows, lambda r: (r.task_id, r.shared_transitions))
    per_task: dict = {}
    for (task, count), mean in by_tc.items():
        per_task.setdefault(task, {})[count] = mean
    best = {
        task: min(c for c, v in cells.items() if v == max(cells.values()))
        for task, cells in per_task.items()
    }
    expert, random_ = expertise_order[0], expertise_order[2]
    ok = best[expert] <= best[random_]
    _report(8, "shared-count ordering", ok,
            f"best count expert {best[expert]} <= random {best[random_]} "
            f"(cells {per_task})")


# --- 9: more dynamics epochs do not hurt held-out error ---------------------

def test_criterion_09_dynamics_checkpoints(desk_cfg, acc_out, expertise_order):
    marks = (250, 500, 1000, 2000)
    grid = cfgmod.build_grid(desk_cfg)
    task = expertise_order[1]  # the medium profile has the most transitions
    snaps = []
    for seed in desk_cfg["evaluation"]["seeds"]:
        run_dir = stages.run_dir_for(acc_out, seed)
        stages.ensure_dataset(desk_cfg, run_dir, seed)
        dataset = ds.load_dataset(stages.dataset_path(run_dir))
        trs = [tr for traj in dataset.per_task[task] for tr in traj.transitions]
        rng = np.random.default_rng([seed, 43])
        order = rng.permutation(len(trs))
        cut = int(0.85 * len(trs))
        train = [trs[i] for i in order[:cut]]
        held = [trs[i] for i in order[cut:]]
        model = wm.DynamicsModel(grid, desk_cfg["world"]["hidden"], rng)
        _, snap = wm.train_dynamics(
            model, train, max(marks), desk_cfg["world"]["batch"],
            desk_cfg["world"]["lr_dyn"], rng,
            eval_transitions=held, eval_epochs=marks)
        snaps.append([snap[m] for m in marks])
    means = np.mean(snaps, axis=0)
    ok = bool(all(means[i + 1] <= means[i] for i in range(len(marks) - 1)))
    _report(9, "dynamics checkpoint curve", ok,
            "held-out mse " + " -> ".join(f"{v:.5f}" for v in means))


# --- 10: the pipeline is deterministic and fits the time budget -------------

def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_determinism_and_runtime(desk_cfg, acc_out):
    task = scarce_task(desk_cfg)
    t0 = time.time()
    run_pipeline(desk_cfg, acc_out / "repro_a", 0, tasks=[task])
    elapsed = time.time() - t0
    run_pipeline(desk_cfg, acc_out / "repro_b", 0, tasks=[task])
    a = _tree_bytes(acc_out / "repro_a")
    b = _tree_bytes(acc_out / "repro_b")
    same_files = sorted(a) == sorted(b)
    diff = [k for k in a if same_files and a[k] != b[k]]
    ok = same_files and not diff and elapsed <= 900.0
    _report(10, "determinism and runtime", ok,
            f"one-task pipeline {elapsed:.0f}s; "
            f"{len(a)} artifacts byte-identical: {same_files and not diff}"
            + (f" (first diff {diff[0]})" if diff else ""))
