import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from disentangail.buffers import TrajectoryBuffer
from disentangail.disc import DiscriminatorStack
from disentangail.envlab import RandomPolicy, binaryworld_reference, make_env, rollout
from disentangail.errors import ContractError
from disentangail.evalrep import (
    ScoreScale,
    best_so_far,
    emit_report,
    format_pm,
    latent_coupling,
    mi_reward_diagnostic,
    normalize_score,
    series_from_curves,
)
from disentangail.miest import contingency, exact_discrete_mi
from disentangail.netcore import LatentRep


def test_normalize_examples():
    s = ScoreScale(random_ref=-50.0, expert_ref=-5.0)
    assert normalize_score(-5.0, s) == 1.0
    assert normalize_score(-50.0, s) == 0.0
    assert normalize_score(-27.5, s) == 0.5
    assert normalize_score(0.0, s) > 1.0
    with pytest.raises(ContractError):
        ScoreScale(1.0, 1.0)
    with pytest.raises(ContractError):
        ScoreScale(float("nan"), 1.0)


def test_best_so_far_examples():
    assert best_so_far([0.2, 0.5, 0.4]) == [0.2, 0.5, 0.5]
    assert best_so_far([0.1, 0.2, 0.3]) == [0.1, 0.2, 0.3]
    assert best_so_far([0.7] * 4) == [0.7] * 4
    with pytest.raises(ContractError):
        best_so_far([])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30),
    st.floats(-100, 100),
    st.floats(0.1, 100),
)
def test_normalize_commutes_with_best_so_far(raw, random_ref, width):
    s = ScoreScale(random_ref, random_ref + width)
    a = best_so_far([normalize_score(x, s) for x in raw])
    b = [normalize_score(x, s) for x in best_so_far(raw)]
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


class Const(nn.Module):
    def forward(self, obs):
        n = obs.shape[0]
        return LatentRep(torch.zeros(n, 4), torch.full((n, 4), 0.5))


def pointreach_obs(n=20, variant=0, seed=0):
    t = rollout(make_env("pointreach", variant, seed), RandomPolicy(2, seed))
    return t.obs[:n]


def test_coupling_self_match_and_ties():
    obs = pointreach_obs()
    stack = DiscriminatorStack((16, 16, 3)).eval()
    for m in latent_coupling(stack.preprocessor, obs, obs, k=4):
        assert m.match_index == m.query_index and m.distance == 0.0
    ties = latent_coupling(Const(), obs, obs, k=4)
    assert [m.match_index for m in ties] == [0, 0, 0, 0]
    with pytest.raises(ContractError):
        latent_coupling(Const(), obs[:0], obs)


def test_coupling_distance_symmetric():
    a, b = pointreach_obs(variant=0, seed=1), pointreach_obs(variant=2, seed=2)
    stack = DiscriminatorStack((16, 16, 3)).eval()
    ab = latent_coupling(stack.preprocessor, a, b, k=5)
    for m in ab:
        (back,) = latent_coupling(stack.preprocessor, b, a, query_indices=[m.match_index])
        with torch.no_grad():
            za = stack.preprocessor(torch.as_tensor(a[[m.query_index]])).mean
            zb = stack.preprocessor(torch.as_tensor(b[[m.match_index]])).mean
        direct = float((za - zb).abs().sum())
        assert m.distance == pytest.approx(direct, rel=1e-5)
        assert back.distance <= m.distance + 1e-6


def bw_buffer():
    e, a = binaryworld_reference()
    buf = TrajectoryBuffer("agent", 100)
    for t in list(e) + list(a):
        buf.push(t)
    return buf


def test_diagnostic_constant_preprocessor_near_zero():
    est = mi_reward_diagnostic(Const(), bw_buffer(), n_steps=300, generator=torch.Generator().manual_seed(0))
    assert abs(est.value) < 0.05


class NewestY(nn.Module):
    """Latent = the y bit of the observation (r_true of that step)."""

    def forward(self, obs):
        y = obs.reshape(obs.shape[0], -1)[:, 1:2]
        return LatentRep(y, torch.full_like(y, 0.5))


def test_diagnostic_direct_embedding_matches_entropy():
    buf = bw_buffer()
    windows, r = buf.all_windows()
    assert np.array_equal(windows[:, 0, 0, 0, 1], r)
    h = exact_discrete_mi(contingency(r, r)).value  # H(r_true) in bits
    est = mi_reward_diagnostic(NewestY(), buf, n_steps=1500, generator=torch.Generator().manual_seed(1))
    assert est.value == pytest.approx(h, abs=0.05)
    assert 0.9 < h <= 1.0


def test_diagnostic_leaves_training_networks_untouched():
    stack = DiscriminatorStack((1, 1, 2))
    before = {k: v.clone() for k, v in stack.state_dict().items()}
    state = torch.random.get_rng_state()
    mi_reward_diagnostic(stack.preprocessor, bw_buffer(), n_steps=50)
    assert torch.equal(state, torch.random.get_rng_state())
    for k, v in stack.state_dict().items():
        assert torch.equal(v, before[k])


def test_format_pm():
    assert format_pm(0.973, 0.074) == "0.973 ± 0.074"
    assert format_pm(1 / 3, 0.0) == "0.333 ± 0.000"


def test_report_structure(tmp_path):
    rng = np.random.default_rng(0)
    curves = {name: [list(np.maximum.accumulate(rng.uniform(0, 1, 6))) for _ in range(5)] for name in ("disentangail", "no_regularization")}
    series = [series_from_curves(k, v) for k, v in curves.items()]
    paths = emit_report(series, tmp_path)
    assert paths["figure"].exists() and paths["figure"].read_bytes()[:4] == b"\x89PNG"
    rows = list(csv.reader(open(paths["csv"])))
    assert len(rows) == 3 and rows[0][0] == "variant"
    assert rows[1][4] == format_pm(series[0].final_mean, series[0].final_stderr)
    assert series[0].n_runs == 5
    expected = np.std([c[-1] for c in curves["disentangail"]], ddof=1) / math.sqrt(5)
    assert series[0].final_stderr == pytest.approx(expected)
    one = series_from_curves("single", [[0.4]])
    assert one.curve_mean == [0.4] and one.final_stderr == 0.0
    emit_report([one], tmp_path / "single")
    assert (tmp_path / "single" / "curves.png").exists()
    with pytest.raises(ContractError):
        series_from_curves("none", [])
