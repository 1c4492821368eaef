"""World model: dynamics fitting, GAN detector, robust-MDP gating."""
import numpy as np
import pytest

from moda.datasets import Transition
from moda.errors import ConfigError, ContractError
from moda.gridsim import (
    N_ACTIONS,
    TERMINATE,
    CellIndex,
    GridSpec,
    StateTensor,
    TaskSpec,
    build_env,
)
from moda.nnkit.gradcheck import max_relative_error, numerical_gradients
from moda.worldmodel import (
    Discriminator,
    DynamicsModel,
    Generator,
    RobustMdp,
    corrupt_next_states,
    detector_auc,
    dynamics_mse,
    gan_objective,
    state_dim,
    state_vector,
    train_dynamics,
    train_gan,
    transition_vectors,
)

GRID = GridSpec(6, 6, 3, 2, 8)


def _env():
    w = np.zeros(2)
    w[0] = 1.0
    w2 = np.zeros(2)
    w2[1] = 1.0
    tasks = [TaskSpec(0, w, 0.9, 0.8), TaskSpec(1, w2, 0.3, 0.8)]
    return build_env(GRID, tasks, 0.05, seed=4)


def _real_transitions(n_traj=30):
    env = _env()
    trajs = env.generate_trajectories(env.tasks[0], n_traj, GRID.horizon, seed=6)
    return [tr for traj in trajs for tr in traj.transitions]


def _constant_transitions(n=60, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    target = np.full((2, 3, 3), 0.5)
    for _ in range(n):
        feats = rng.uniform(size=(2, 3, 3))
        t = int(rng.integers(GRID.horizon - 1))
        s = StateTensor(feats, t, CellIndex(3, 3))
        s2 = StateTensor(target.copy(), t + 1, CellIndex(3, 3))
        out.append(Transition(s, int(rng.integers(N_ACTIONS - 1)), s2, 0.3, 0))
    return out


def test_state_vector_layout():
    feats = np.arange(18, dtype=float).reshape(2, 3, 3) / 18.0
    s = StateTensor(feats, 4, CellIndex(2, 2))
    v = state_vector(s, 8)
    assert v.shape == (state_dim(GRID),)
    assert np.array_equal(v[:-1], feats.ravel())
    assert v[-1] == 0.5


def test_transition_vector_layout():
    trs = _real_transitions(2)[:3]
    vecs = transition_vectors(trs, GRID)
    nf = 18
    assert vecs.shape == (3, 2 * nf + N_ACTIONS + 1)
    for row, tr in zip(vecs, trs):
        assert np.array_equal(row[:nf], tr.state.features.ravel())
        onehot = row[nf : nf + N_ACTIONS]
        assert onehot[tr.action] == 1.0 and onehot.sum() == 1.0
        assert np.array_equal(
            row[nf + N_ACTIONS : 2 * nf + N_ACTIONS], tr.next_state.features.ravel()
        )
        assert row[-1] == tr.reward


def test_dynamics_fits_constant_map():
    trs = _constant_transitions()
    model = DynamicsModel(GRID, 16, np.random.default_rng(1))
    curve, _ = train_dynamics(model, trs, 150, 16, 1e-2, np.random.default_rng(2))
    assert curve[-1] < 1e-3
    assert curve[-1] < 0.05 * curve[0]
    _, pred_r = model.predict(
        np.concatenate([state_vector(trs[0].state, 8), np.eye(N_ACTIONS)[0]])
    )
    assert abs(pred_r[0] - 0.3) < 0.05


def test_dynamics_mse_matches_manual():
    trs = _real_transitions(3)
    model = DynamicsModel(GRID, 8, np.random.default_rng(1))
    got = dynamics_mse(model, trs)
    from moda.worldmodel import prepare_dynamics_data

    x, y_next, y_r = prepare_dynamics_data(trs, GRID)
    pn, pr = model.predict(x)
    want = float(np.mean((pn - y_next) ** 2) + np.mean((pr - y_r) ** 2))
    assert got == want


def test_dynamics_heldout_snapshots():
    trs = _constant_transitions()
    held = _constant_transitions(n=20, seed=9)
    model = DynamicsModel(GRID, 16, np.random.default_rng(1))
    _, snaps = train_dynamics(
        model, trs, 40, 16, 1e-2, np.random.default_rng(2),
        eval_transitions=held, eval_epochs=(5, 40),
    )
    assert set(snaps) == {5, 40}
    assert snaps[40] < snaps[5]


def test_dynamics_requires_data():
    model = DynamicsModel(GRID, 8, np.random.default_rng(1))
    with pytest.raises(ConfigError):
        train_dynamics(model, [], 5, 8, 1e-3, np.random.default_rng(0))


def test_dynamics_training_deterministic():
    trs = _real_transitions(5)

    def run():
        model = DynamicsModel(GRID, 8, np.random.default_rng(1))
        curve, _ = train_dynamics(model, trs, 5, 16, 1e-3, np.random.default_rng(2))
        return curve, [p.copy() for p in model.params()]

    c1, p1 = run()
    c2, p2 = run()
    assert c1 == c2
    assert all(np.array_equal(a, b) for a, b in zip(p1, p2))


def test_generator_head_structure():
    gen = Generator(GRID, 4, 8, np.random.default_rng(3))
    z = np.random.default_rng(4).standard_normal((5, 4))
    out = gen.sample(z)
    nf = 18
    assert out.shape == (5, 2 * nf + N_ACTIONS + 1)
    assert np.all(out[:, :nf] > 0) and np.all(out[:, :nf] < 1)
    acts = out[:, nf : nf + N_ACTIONS]
    assert np.all(acts > 0)
    assert np.allclose(acts.sum(axis=1), 1.0)
    s2 = out[:, nf + N_ACTIONS : 2 * nf + N_ACTIONS]
    assert np.all(s2 > 0) and np.all(s2 < 1)


def test_generator_backward_requires_sample():
    gen = Generator(GRID, 4, 8, np.random.default_rng(3))
    with pytest.raises(ContractError):
        gen.backward(np.zeros((2, 2 * 18 + N_ACTIONS + 1)))


def test_generator_head_gradients():
    gen = Generator(GRID, 4, 8, np.random.default_rng(3))
    rng = np.random.default_rng(5)
    z = rng.standard_normal((3, 4))
    c = rng.standard_normal((3, 2 * 18 + N_ACTIONS + 1))

    def loss_fn():
        return float((gen.sample(z) * c).sum())

    loss_fn()
    gen.backward(c)
    analytic = [g.copy() for g in gen.net.grads()]
    numerical = numerical_gradients(loss_fn, gen.net.params())
    assert max_relative_error(analytic, numerical) < 1e-4


def test_discriminator_scores_strictly_inside_unit_interval():
    disc = Discriminator(GRID, 8, np.random.default_rng(3))
    x = np.random.default_rng(4).standard_normal((20, 2 * 18 + N_ACTIONS + 1)) * 50
    s = disc.score(x)
    assert np.all(s >= 1e-7) and np.all(s <= 1 - 1e-7)


class _FlatDetector:
    def __init__(self, value):
        self.value = value

    def score(self, x):
        return np.full(np.atleast_2d(x).shape[0], self.value)


def test_gan_objective_at_half():
    real = np.zeros((4, 2 * 18 + N_ACTIONS + 1))
    fake = np.ones((4, 2 * 18 + N_ACTIONS + 1))
    val = gan_objective(_FlatDetector(0.5), real, fake)
    assert np.isclose(val, -2.0 * np.log(2.0))


def test_corruption_permutes_only_next_state_block():
    trs = _real_transitions(10)
    vecs = transition_vectors(trs, GRID)
    rng = np.random.default_rng(7)
    bad = corrupt_next_states(vecs, GRID, rng)
    nf = 18
    lo, hi = nf + N_ACTIONS, 2 * nf + N_ACTIONS
    assert np.array_equal(bad[:, :lo], vecs[:, :lo])
    assert np.array_equal(bad[:, hi:], vecs[:, hi:])
    # next-state rows are a permutation of the originals
    assert np.array_equal(
        np.sort(bad[:, lo:hi], axis=0), np.sort(vecs[:, lo:hi], axis=0)
    )
    assert not np.array_equal(bad[:, lo:hi], vecs[:, lo:hi])


class _FirstColumnDetector:
    def score(self, x):
        return np.atleast_2d(x)[:, 0]


def test_auc_hand_cases():
    det = _FirstColumnDetector()
    hi = np.full((5, 3), 0.9)
    lo = np.full((5, 3), 0.1)
    assert detector_auc(det, hi, lo) == 1.0
    assert detector_auc(det, lo, hi) == 0.0
    assert detector_auc(det, hi, hi) == 0.5


def test_auc_matches_pairwise_count():
    rng = np.random.default_rng(8)
    real = rng.uniform(size=(17, 3))
    bad = rng.uniform(size=(23, 3))
    det = _FirstColumnDetector()
    got = detector_auc(det, real, bad)
    wins = sum(
        1.0 if r > b else (0.5 if r == b else 0.0)
        for r in real[:, 0]
        for b in bad[:, 0]
    )
    assert np.isclose(got, wins / (17 * 23))


@pytest.mark.slow
def test_gan_training_separates_real_from_generated():
    # After brief training the discriminator should still dominate the
    # generator: real transitions score clearly above fresh samples.
    trs = _real_transitions(40)
    rng = np.random.default_rng(9)
    gen = Generator(GRID, 8, 32, rng)
    disc = Discriminator(GRID, 32, rng)
    d_curve, g_curve = train_gan(gen, disc, trs, 30, 32, 5e-4, 2e-4, rng)
    assert len(d_curve) == len(g_curve) == 30
    assert d_curve[-1] < d_curve[0]
    real = transition_vectors(trs, GRID)
    fakes = gen.sample(np.random.default_rng(10).standard_normal((200, 8)))
    assert detector_auc(disc, real, fakes) >= 0.9


def test_gan_requires_data():
    rng = np.random.default_rng(9)
    gen = Generator(GRID, 8, 8, rng)
    disc = Discriminator(GRID, 8, rng)
    with pytest.raises(ConfigError):
        train_gan(gen, disc, [], 5, 8, 1e-3, 1e-3, rng)


def _fitted_world(trs, seed=1):
    model = DynamicsModel(GRID, 16, np.random.default_rng(seed))
    train_dynamics(model, trs, 30, 16, 1e-2, np.random.default_rng(seed + 1))
    return model


def test_robust_mdp_threshold_zero_is_bare_rollout():
    trs = _real_transitions(10)
    model = _fitted_world(trs)
    disc = Discriminator(GRID, 8, np.random.default_rng(2))
    pool = [tr.state for tr in trs]
    mdp = RobustMdp(model, disc, pool, 0.0, -1.0, GRID)
    rng = np.random.default_rng(3)
    state = mdp.reset(rng)
    manual = state.copy()
    from moda.worldmodel import dynamics_input

    done = False
    while not done:
        nxt, r, done = mdp.step(state, 8)
        x = dynamics_input(state_vector(manual, GRID.horizon), np.array([8]))
        pn, pr = model.predict(x)
        assert np.isclose(r, float(pr[0]))
        assert np.array_equal(
            nxt.features, np.clip(pn[0], 0, 1).reshape(2, 3, 3)
        )
        assert nxt.t == manual.t + 1 and nxt.center == manual.center
        manual = nxt
        state = nxt
    assert state.t == GRID.horizon


def test_robust_mdp_threshold_one_gates_immediately():
    trs = _real_transitions(5)
    model = _fitted_world(trs)
    disc = Discriminator(GRID, 8, np.random.default_rng(2))
    pool = [tr.state for tr in trs]
    mdp = RobustMdp(model, disc, pool, 1.0, -1.0, GRID)
    rng = np.random.default_rng(3)
    for _ in range(5):
        state = mdp.reset(rng)
        nxt, r, done = mdp.step(state, 8)
        assert done and r == -1.0
        assert nxt == state


def test_robust_mdp_terminate_keeps_time_and_center():
    trs = _real_transitions(5)
    model = _fitted_world(trs)
    pool = [tr.state for tr in trs]
    mdp = RobustMdp(model, _FlatDetector(0.9), pool, 0.5, -1.0, GRID)
    state = mdp.reset(np.random.default_rng(3))
    nxt, r, done = mdp.step(state, TERMINATE)
    assert done
    assert nxt.t == state.t and nxt.center == state.center
    x_in = np.concatenate([state_vector(state, GRID.horizon), np.eye(N_ACTIONS)[TERMINATE]])
    _, pr = model.predict(x_in)
    assert np.isclose(r, float(pr[0]))


def test_robust_mdp_contracts():
    trs = _real_transitions(3)
    model = _fitted_world(trs)
    disc = Discriminator(GRID, 8, np.random.default_rng(2))
    pool = [tr.state for tr in trs]
    with pytest.raises(ConfigError):
        RobustMdp(model, disc, [], 0.5, -1.0, GRID)
    with pytest.raises(ConfigError):
        RobustMdp(model, disc, pool, 1.5, -1.0, GRID)
    mdp = RobustMdp(model, disc, pool, 0.0, -1.0, GRID)
    exhausted = StateTensor(pool[0].features, GRID.horizon, pool[0].center)
    with pytest.raises(ContractError):
        mdp.step(exhausted, 8)
    with pytest.raises(ContractError):
        mdp.step(pool[0], N_ACTIONS)


def test_robust_mdp_reset_copies_pool_state():
    trs = _real_transitions(3)
    model = _fitted_world(trs)
    disc = Discriminator(GRID, 8, np.random.default_rng(2))
    pool = [tr.state for tr in trs]
    mdp = RobustMdp(model, disc, pool, 0.5, -1.0, GRID)
    state = mdp.reset(np.random.default_rng(4))
    assert any(state == s for s in pool)
    state.features[:] = -99.0
    assert all(s.features.min() >= 0.0 for s in pool)


def test_robust_mdp_gate_monotone_in_threshold():
    trs = _real_transitions(15)
    model = _fitted_world(trs)
    disc = Discriminator(GRID, 16, np.random.default_rng(12))
    pool = [tr.state for tr in trs]

    def episode_length(threshold, seed):
        mdp = RobustMdp(model, disc, pool, threshold, -1.0, GRID)
        rng = np.random.default_rng(seed)
        state = mdp.reset(rng)
        steps = 0
        done = False
        while not done:
            state, _, done = mdp.step(state, 8)
            steps += 1
        return steps

    for seed in range(8):
        lengths = [episode_length(thr, seed) for thr in (0.0, 0.3, 0.6, 0.9)]
        assert lengths == sorted(lengths, reverse=True)


def test_world_model_save_load_round_trips(tmp_path):
    trs = _real_transitions(3)
    rng = np.random.default_rng(13)
    model = DynamicsModel(GRID, 8, rng)
    gen = Generator(GRID, 4, 8, rng)
    disc = Discriminator(GRID, 8, rng)
    x = np.random.default_rng(14).uniform(size=(4, state_dim(GRID) + N_ACTIONS))
    z = np.random.default_rng(15).standard_normal((4, 4))
    v = np.random.default_rng(16).uniform(size=(4, 2 * 18 + N_ACTIONS + 1))

    model.save(tmp_path / "dyn.npz")
    gen.save(tmp_path / "gen.npz")
    disc.save(tmp_path / "disc.npz")

    rng2 = np.random.default_rng(99)
    model2 = DynamicsModel(GRID, 8, rng2)
    gen2 = Generator(GRID, 4, 8, rng2)
    disc2 = Discriminator(GRID, 8, rng2)
    model2.load(tmp_path / "dyn.npz")
    gen2.load(tmp_path / "gen.npz")
    disc2.load(tmp_path / "disc.npz")

    pn1, pr1 = model.predict(x)
    pn2, pr2 = model2.predict(x)
    assert np.array_equal(pn1, pn2) and np.array_equal(pr1, pr2)
    assert np.array_equal(gen.sample(z), gen2.sample(z))
    assert np.array_equal(disc.score(v), disc2.score(v))
