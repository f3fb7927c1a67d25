import json
import math

import numpy as np
import pytest
import torch

from disentangail import envlab
from disentangail import orchestrator as orch
from disentangail.errors import ConfigurationError, DivergenceError
from disentangail.orchestrator import METRIC_COLUMNS, RunConfig, disc_config, imax_sweep, read_metrics, run_matrix, train


def bw(**kw):
    base = dict(realm="binaryworld", source_variant=0, target_variant=1, epochs=1, seed=0)
    base.update(kw)
    return RunConfig(**base)


def test_variant_switches():
    c = disc_config(RunConfig(algorithm="disentangail"))
    assert c.use_expert_penalty and c.use_prior_penalty and c.spectral_norm and c.double_stat and c.prior_negatives
    c = disc_config(RunConfig(algorithm="no_prior"))
    assert c.use_expert_penalty and not c.use_prior_penalty and not c.prior_negatives
    c = disc_config(RunConfig(algorithm="dcl"))
    assert not c.use_expert_penalty and not c.use_prior_penalty and c.dcl_weight == 1.0
    for a in ("no_regularization", "source_upper_bound"):
        c = disc_config(RunConfig(algorithm=a))
        assert not c.use_expert_penalty and not c.use_prior_penalty and c.dcl_weight == 0.0
    assert not disc_config(RunConfig(algorithm="no_sn")).spectral_norm
    assert not disc_config(RunConfig(algorithm="no_2st")).double_stat
    c = disc_config(RunConfig(algorithm="no_prev"))
    assert not c.spectral_norm and not c.double_stat
    assert RunConfig(algorithm="source_upper_bound").effective_target == 0
    assert RunConfig(epoch_steps=250).episodes_per_epoch == 5
    with pytest.raises(ConfigurationError):
        RunConfig(algorithm="gail")
    with pytest.raises(ConfigurationError):
        RunConfig(target_variant=42)


def test_episode_accounting_binaryworld():
    art = train(bw())
    assert len(art.episode_counts) == 83
    for c in art.episode_counts:
        assert (c.disc_steps, c.mi_step_pairs, c.beta_updates, c.lambda_updates, c.agent_steps) == (3, 3, 1, 1, 3)
    assert all(art.penalty.lam >= 0 for _ in [0])


def test_episode_accounting_pointreach_no_prior():
    cfg = RunConfig(algorithm="no_prior", epochs=1, epoch_steps=50, expert_train_steps=100, ref_episodes=2, eval_episodes=1)
    art = train(cfg)
    (c,) = art.episode_counts
    assert (c.disc_steps, c.mi_step_pairs, c.beta_updates, c.lambda_updates, c.agent_steps) == (50, 50, 1, 0, 50)


def test_epochs_zero_gives_single_row(tmp_path):
    art = train(bw(epochs=0, out_dir=str(tmp_path)))
    assert len(art.metrics) == 1 and art.metrics[0].epoch == 0
    rows = read_metrics(tmp_path / "metrics.csv")
    assert len(rows) == 1
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == ",".join(METRIC_COLUMNS)


def test_metrics_csv_bit_reproducible(tmp_path):
    a = train(bw(epochs=2, out_dir=str(tmp_path / "a")))
    b = train(bw(epochs=2, out_dir=str(tmp_path / "b")))
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a.curve == b.curve
    for name in ("config.yaml", "summary.json", "score_scale.json", "data/expert.traj", "data/agent.traj", "checkpoints/final.bin"):
        assert (tmp_path / "a" / name).exists()


def test_binaryworld_five_epochs_reaches_expert():
    art = train(bw(epochs=5))
    assert art.final_best >= 0.9
    assert all(m.lam >= 0 for m in art.metrics)


def test_best_so_far_is_running_max():
    art = train(bw(epochs=3, seed=2))
    scores = [m.normalized_score for m in art.metrics]
    assert [m.best_so_far for m in art.metrics] == list(np.maximum.accumulate(scores))


def test_agent_never_reads_true_reward(monkeypatch):
    def params(art):
        return [p.detach().clone() for p in art.agent.policy.parameters()]

    ref = params(train(bw(epochs=1, seed=4)))
    orch._EXPERT_CACHE.clear()
    monkeypatch.setattr(type(envlab._DYNAMICS["binaryworld"]), "reward", lambda self, s: float(np.random.default_rng().normal()))
    monkeypatch.setattr(orch, "score_scale", lambda cfg: orch.ScoreScale(0.0, 1.0))
    got = params(train(bw(epochs=1, seed=4)))
    orch._EXPERT_CACHE.clear()
    for a, b in zip(ref, got):
        assert torch.equal(a, b)


def test_divergence_dumps_diagnostics(tmp_path, monkeypatch):
    def boom(self, *a, **k):
        raise FloatingPointError("nan critic loss")

    monkeypatch.setattr(orch.ActorCritic, "agent_update", boom)
    with pytest.raises(DivergenceError):
        train(bw(out_dir=str(tmp_path)))
    info = json.loads((tmp_path / "divergence.json").read_text())
    assert info["epoch"] == 1 and "nan critic loss" in info["error"]
    assert (tmp_path / "checkpoints" / "diverged.bin").exists()


def test_missing_input_file():
    with pytest.raises(ConfigurationError):
        train(bw(expert_path="/nonexistent/expert.traj"))
    with pytest.raises(ConfigurationError):
        train(bw(prior_expert_path="/nonexistent/p.traj"))


def test_matrix_single_seed_flagged_and_failures_recorded(tmp_path):
    good = bw(epochs=1, out_dir=str(tmp_path))
    bad = bw(epochs=1, algorithm="no_prior", expert_path="/nonexistent.traj", out_dir=str(tmp_path))
    rows = run_matrix([good, bad], 1)
    assert rows[0].stderr_flagged and rows[0].final_stderr == 0.0 and not rows[0].failures
    assert rows[1].failures and 0 in rows[1].failures and not rows[1].runs
    assert math.isnan(rows[1].final_mean)
    assert (tmp_path / "disentangail" / "seed0" / "metrics.csv").exists()
    with pytest.raises(ConfigurationError):
        run_matrix([good], 0)


def test_matrix_stderr_over_seeds():
    rows = run_matrix([bw(epochs=1)], [0, 1])
    finals = [r.final_best for r in rows[0].runs]
    assert rows[0].final_mean == pytest.approx(np.mean(finals))
    assert rows[0].final_stderr == pytest.approx(np.std(finals, ddof=1) / np.sqrt(2))
    assert not rows[0].stderr_flagged


def test_imax_sweep_empty_and_labels():
    assert imax_sweep(bw(), [], 1) == []
    rows = imax_sweep(bw(epochs=1), [0.5], 1, diag_steps=50)
    assert rows[0].label == "imax0.5" and rows[0].config.i_max_expert == 0.5
    assert np.isfinite(rows[0].diagnostic_mean)


def test_load_run_round_trip(tmp_path):
    art = train(bw(out_dir=str(tmp_path)))
    cfg, stack, agent = orch.load_run(tmp_path)
    assert cfg == bw(out_dir=str(tmp_path))
    for a, b in zip(art.stack.state_dict().values(), stack.state_dict().values()):
        assert torch.equal(a, b)
    for a, b in zip(art.agent.policy.parameters(), agent.policy.parameters()):
        assert torch.equal(a, b)
