import numpy as np
import pytest

from disentangail.envlab import (
    REALMS,
    RandomPolicy,
    binaryworld_reference,
    bit_marginals,
    collect_policy,
    collect_random,
    get_realm,
    load_trajectories,
    make_env,
    observation_windows,
    rollout,
    save_trajectories,
    variant_index,
)
from disentangail.errors import ConfigurationError, ContractError, UsageError


def test_binaryworld_marker_per_domain():
    for seed in (0, 3):
        e = make_env("binaryworld", 0, seed)
        a = make_env("binaryworld", 1, seed)
        for _ in range(3):
            assert e.observe()[..., 0].item() == 1.0
            assert a.observe()[..., 0].item() == 0.0
            e.step([1.0])
            a.step([-1.0])


def test_binaryworld_move_to_target():
    env = make_env("binaryworld", 1, 0)
    assert env.observe()[..., 1].item() == 0.0
    obs, r, done = env.step([1.0])
    assert obs[..., 1].item() == 1.0
    assert r == 0.0  # reward reads the state before the action
    _, r, _ = env.step([1.0])
    assert r == 1.0


def test_seeded_initial_state():
    a, b = make_env("pointreach", 0, 7), make_env("pointreach", 0, 7)
    np.testing.assert_array_equal(a.state, b.state)
    assert a.t == 0


def test_pointreach_zero_action_keeps_position():
    for v in range(len(get_realm("pointreach").variants)):
        env = make_env("pointreach", v, 1)
        s0 = env.state.copy()
        env.step(np.zeros(env.action_dim))
        np.testing.assert_allclose(env.state, s0)


@pytest.mark.parametrize("realm", REALMS)
def test_done_exactly_at_horizon(realm):
    env = make_env(realm, 0, 0)
    for t in range(env.horizon):
        _, _, done = env.step(np.zeros(env.action_dim))
        assert done == (t == env.horizon - 1)
    with pytest.raises(UsageError):
        env.step(np.zeros(env.action_dim))
    env.reset()
    env.step(np.zeros(env.action_dim))


def test_errors():
    with pytest.raises(ConfigurationError):
        make_env("mujoco", 0, 0)
    with pytest.raises(ConfigurationError):
        make_env("pointreach", 99, 0)
    with pytest.raises(ConfigurationError):
        variant_index("pointreach", "nope")
    env = make_env("pointreach", 1, 0)  # 3-d embodiment
    with pytest.raises(ContractError):
        env.step(np.zeros(2))


@pytest.mark.parametrize("realm", REALMS)
def test_realm_invariants(realm):
    r = get_realm(realm)
    assert len(r.variants) >= 2
    for v in range(len(r.variants)):
        env = make_env(realm, v, 2)
        traj = rollout(env, RandomPolicy(env.action_dim, 0))
        assert len(traj) == r.horizon
        assert traj.obs.shape == (r.horizon, *r.obs_shape)
        assert traj.obs.min() >= 0.0 and traj.obs.max() <= 1.0


@pytest.mark.parametrize("realm", ["pointreach", "cartbalance"])
def test_appearance_does_not_change_dynamics(realm):
    r = get_realm(realm)
    groups = {}
    for i, v in enumerate(r.variants):
        groups.setdefault(v.embodiment, []).append(i)
    checked = 0
    for members in groups.values():
        if len(members) < 2:
            continue
        trajs = [rollout(make_env(realm, i, 5), RandomPolicy(r.variants[i].embodiment.action_dim, 9)) for i in members]
        for t in trajs[1:]:
            np.testing.assert_array_equal(t.states, trajs[0].states)
            assert not np.array_equal(t.obs, trajs[0].obs)
        checked += 1
    assert checked >= 1


def test_collect_random_sizes():
    ts = collect_random(make_env("pointreach", 0, 0), 100)
    assert len(ts) == 2 and all(len(t) == 50 for t in ts)
    assert len(collect_random(make_env("cartbalance", 0, 0), 0)) == 0
    with pytest.raises(ContractError):
        collect_random(make_env("pointreach", 0, 0), 75)
    ts = collect_policy(make_env("pointreach", 0, 0), RandomPolicy(2, 1), 5)
    assert len(ts) == 5


def test_collect_random_binaryworld_expert_variant():
    ts = collect_random(make_env("binaryworld", 0, 0), 12, domain=1)
    assert len(ts) == 4
    m = bit_marginals([ts])
    assert m["p(x=1)"] == 1.0
    for t in ts:
        assert t.obs[0, 0, 0, 1] == 0.0  # every episode starts outside the target


def test_binaryworld_reference_matches_toy_table():
    e, a = binaryworld_reference()
    assert len(e) == 4 and len(a) == 4
    for t in e:
        np.testing.assert_array_equal(t.obs.reshape(3, 2), [[1, 0], [1, 1], [1, 1]])
    y_e = sum(int(t.obs[..., 1].sum()) for t in e)
    y_a = sum(int(t.obs[..., 1].sum()) for t in a)
    assert (y_e, y_a) == (8, 2)
    m = bit_marginals([e, a])
    assert m["p(x=1|y=1)"] == pytest.approx(4 / 5)
    assert m["p(x=1|y=0)"] == pytest.approx(2 / 7)
    assert e.domain == 1 and a.domain == 0


def test_observation_windows_pad_with_first_frame():
    obs = np.arange(5)[:, None].astype(float)
    w = observation_windows(obs, 0)
    np.testing.assert_array_equal(w[:, 0], [0, 0, 0, 0])
    w = observation_windows(obs, 4)
    np.testing.assert_array_equal(w[:, 0], [4, 3, 2, 1])
    w = observation_windows(obs, np.array([1, 2]))
    np.testing.assert_array_equal(w[..., 0], [[1, 0, 0, 0], [2, 1, 0, 0]])


def test_trajectory_file_round_trip(tmp_path):
    ts = collect_random(make_env("pointreach", 3, 4), 100, domain=0)
    path = save_trajectories(ts, tmp_path / "prior.traj")
    back = load_trajectories(path)
    assert (back.realm_id, back.variant_index, back.horizon, back.domain) == ("pointreach", 3, 50, 0)
    assert back.action_dim == 3
    for a, b in zip(ts, back):
        for f in ("obs", "states", "actions", "next_states", "r_true"):
            np.testing.assert_array_equal(getattr(a, f).astype(np.float32), getattr(b, f))
    manifest = (tmp_path / "prior.traj.csv").read_text().splitlines()
    assert len(manifest) == 3


def test_bad_trajectory_file(tmp_path):
    p = tmp_path / "x.traj"
    p.write_bytes(b"garbage!" * 4)
    with pytest.raises(ContractError):
        load_trajectories(p)


def test_cartbalance_state_bounds():
    env = make_env("cartbalance", 1, 0)
    traj = rollout(env, RandomPolicy(1, 3))
    assert np.all(np.abs(traj.states[:, 0]) <= 2.4)
    assert np.all(np.abs(traj.states[:, 2]) <= np.pi)


def test_pointreach_starts_away_from_target():
    starts = np.array([make_env("pointreach", 0, s).state for s in range(200)])
    assert starts.min() >= -1.0 and starts.max() <= 0.0
    assert starts.std(0).min() > 0.2
