import numpy as np
import pytest

from disentangail.buffers import Capacities, TrajectoryBuffer, load_reference_sizes
from disentangail.envlab import RandomPolicy, Trajectory, binaryworld_reference, collect_random, make_env, rollout
from disentangail.errors import ConfigurationError, ContractError, UsageError


def agent_trajs(n, seed=0):
    env = make_env("pointreach", 3, seed)
    return [rollout(env, RandomPolicy(3, seed + i)) for i in range(n)]


def test_labels_per_kind(rng):
    e, a = binaryworld_reference()
    be = TrajectoryBuffer("expert", 12).load(e)
    bp = TrajectoryBuffer("prior_agent", 12).load(a)
    assert np.all(be.sample_windows(8, rng).labels == 1)
    assert np.all(bp.sample_observations(8, rng)[1] == 0)
    assert TrajectoryBuffer("prior_expert", 1).domain == 1
    assert TrajectoryBuffer("agent", 1).domain == 0


def test_agent_buffer_evicts_oldest_whole_trajectories():
    buf = TrajectoryBuffer("agent", 120)
    trajs = agent_trajs(4)
    for t in trajs:
        buf.push(t)
    assert buf.n_observations == 100
    assert buf.trajectories[0] is trajs[2] and buf.trajectories[1] is trajs[3]


def test_push_and_load_rules():
    e, _ = binaryworld_reference()
    be = TrajectoryBuffer("expert", 12).load(e)
    with pytest.raises(UsageError):
        be.load(e)
    with pytest.raises(UsageError):
        be.push(e.trajectories[0])
    with pytest.raises(UsageError):
        TrajectoryBuffer("agent", 10).load(e)
    with pytest.raises(ConfigurationError):
        TrajectoryBuffer("other", 10)
    buf = TrajectoryBuffer("agent", 1000)
    buf.push(agent_trajs(1)[0])
    with pytest.raises(ContractError):
        buf.push(e.trajectories[0])  # horizon 3 against 50


def test_empty_buffer_sampling_raises(rng):
    with pytest.raises(ContractError):
        TrajectoryBuffer("agent", 10).sample_windows(4, rng)


def test_sampling_is_uniform_over_observations():
    buf = TrajectoryBuffer("agent", 1000)
    for t in agent_trajs(2):
        buf.push(t)
    rng = np.random.default_rng(1)
    n = 50_000
    b = buf.sample_windows(n, rng)
    counts = np.bincount(b.traj * 50 + b.t, minlength=100)
    p = 1 / 100
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 4 * sigma)
    assert np.abs(counts - n * p).mean() < sigma


def test_windows_are_newest_first_and_padded(rng):
    buf = TrajectoryBuffer("agent", 1000)
    t = agent_trajs(1)[0]
    buf.push(t)
    w, r = buf.all_windows()
    assert w.shape == (50, 4, *t.obs.shape[1:])
    np.testing.assert_array_equal(w[10, 0], t.obs[10])
    np.testing.assert_array_equal(w[10, 3], t.obs[7])
    np.testing.assert_array_equal(w[1, 2], t.obs[0])
    np.testing.assert_array_equal(r, t.r_true)
    tb = buf.sample_transitions(16, rng)
    assert tb.states.shape == (16, t.states.shape[1]) and tb.windows.shape[0] == 16


def test_reference_sizes():
    assert load_reference_sizes("binaryworld") == Capacities(12, 300, 300, 3)
    assert load_reference_sizes("pointreach", 0.1) == Capacities(1000, 1000, 1000, 50)
    assert load_reference_sizes("reacher", 1.0) == Capacities(10000, 10000, 10000, 50)
    assert load_reference_sizes("hopper", 1.0).agent == 100_000
    with pytest.raises(ConfigurationError):
        load_reference_sizes("nowhere")


def test_prior_collection_fills_capacity():
    cap = load_reference_sizes("pointreach", 0.1)
    ts = collect_random(make_env("pointreach", 0, 0), cap.prior, domain=1)
    buf = TrajectoryBuffer("prior_expert", cap.prior).load(ts)
    assert buf.n_observations == cap.prior


def test_capacity_100_evicts_first_of_three():
    buf = TrajectoryBuffer("agent", 100)
    trajs = agent_trajs(3)
    for t in trajs:
        buf.push(t)
        assert buf.n_observations <= 100
    assert all(t is not trajs[0] for t in buf.trajectories) and len(buf) == 2


def test_empty_trajectory_is_ignored(caplog):
    buf = TrajectoryBuffer("agent", 100)
    t = agent_trajs(1)[0]
    empty = Trajectory(t.obs[:0], t.states[:0], t.actions[:0], t.next_states[:0], t.r_true[:0])
    with caplog.at_level("WARNING"):
        buf.push(empty)
    assert len(buf) == 0 and "empty" in caplog.text


def test_per_trajectory_frequency_uniform_over_ten_trajectories():
    buf = TrajectoryBuffer("agent", 10_000)
    for t in agent_trajs(10):
        buf.push(t)
    n = 100_000
    b = buf.sample_windows(n, np.random.default_rng(3))
    assert b.windows.shape[0] == n
    counts = np.bincount(b.traj, minlength=10)
    sigma = np.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n * 0.1) < 3 * sigma)


def test_binaryworld_windows_padded(rng):
    e, _ = binaryworld_reference()
    b = TrajectoryBuffer("expert", 12).load(e).sample_windows(128, rng)
    assert b.windows.shape == (128, 4, 1, 1, 2)
    np.testing.assert_array_equal(b.windows[b.t == 0][:, 1:, ..., 1], 0.0)
