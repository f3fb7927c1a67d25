"""End-to-end training loop, baseline variants, seed matrices and sweeps."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .agent import ActorCritic, SACConfig, evaluate_policy
from .buffers import TrajectoryBuffer, load_reference_sizes
from .constraints import PenaltyState
from .disc import DiscConfig, DiscriminatorStack, DiscriminatorTrainer, accuracy, pseudo_rewards
from .envlab import (
    RandomPolicy,
    TrajectorySet,
    binaryworld_reference,
    collect_policy,
    collect_random,
    get_realm,
    load_trajectories,
    make_env,
    rollout,
    save_trajectories,
)
from .errors import ConfigurationError, DivergenceError
from .evalrep import ScoreScale, mi_reward_diagnostic, normalize_score
from .netcore import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

ALGORITHMS = (
    "disentangail",
    "no_prior",
    "dcl",
    "no_regularization",
    "source_upper_bound",
    "no_sn",
    "no_2st",
    "no_prev",
)

# Frozen v1 column order of metrics.csv.
METRIC_COLUMNS = (
    "epoch",
    "env_steps",
    "eval_return",
    "normalized_score",
    "best_so_far",
    "mi_expert_bits",
    "mi_prior_bits",
    "beta",
    "lambda",
    "j_g",
    "loss_beta",
    "loss_lambda",
    "loss_d",
    "disc_accuracy",
    "loss_critic",
    "loss_actor",
    "pseudo_reward",
)


@dataclass
class RunConfig:
    realm: str = "pointreach"
    source_variant: int = 0
    target_variant: int = 3
    algorithm: str = "disentangail"
    i_max_expert: float = 0.99
    i_max_prior: float = 0.001
    epochs: int = 10
    epoch_steps: int = 250
    seed: int = 0
    batch_size: int = 128
    buffer_scale: float = 0.1
    # discriminator, statistics networks
    latent_dim: int = 4
    disc_hidden: int = 32
    stat_hidden: int = 32
    preprocessor_arch: str = "mlp"
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    beta_init: float = 1.0
    dual_step: float = 0.01
    dcl_weight: float = 1.0
    # agent
    sac_hidden: int = 64
    temperature: float = 0.2
    discount: float = 0.99
    polyak: float = 0.995
    # expert recipe and evaluation
    expert_seed: int = 0
    expert_train_steps: int = 4000
    eval_episodes: int = 5
    ref_episodes: int = 20
    diag_steps: int = 0
    # optional file inputs (envlab trajectory format); generated when empty
    expert_path: str = ""
    prior_expert_path: str = ""
    prior_agent_path: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm variant {self.algorithm!r}")
        realm = get_realm(self.realm)
        for name in ("source_variant", "target_variant"):
            v = getattr(self, name)
            if not 0 <= v < len(realm.variants):
                raise ConfigurationError(f"{name}={v} out of range for realm {self.realm}")
        if self.epochs < 0 or self.epoch_steps <= 0 or self.batch_size < 2:
            raise ConfigurationError("need epochs >= 0, epoch_steps > 0 and batch_size >= 2")

    @property
    def effective_target(self) -> int:
        return self.source_variant if self.algorithm == "source_upper_bound" else self.target_variant

    @property
    def uses_prior(self) -> bool:
        return self.algorithm not in ("no_prior", "no_regularization", "source_upper_bound")

    @property
    def episodes_per_epoch(self) -> int:
        return max(1, int(round(self.epoch_steps / get_realm(self.realm).horizon)))


def disc_config(cfg: RunConfig) -> DiscConfig:
    a = cfg.algorithm
    unregularized = a in ("no_regularization", "source_upper_bound")
    return DiscConfig(
        latent_dim=cfg.latent_dim,
        hidden=cfg.disc_hidden,
        arch=cfg.preprocessor_arch,
        spectral_norm=a not in ("no_sn", "no_prev"),
        double_stat=a not in ("no_2st", "no_prev"),
        stat_hidden=cfg.stat_hidden,
        lr=cfg.lr,
        adam_betas=(cfg.adam_beta1, cfg.adam_beta2),
        use_expert_penalty=not unregularized and a != "dcl",
        use_prior_penalty=cfg.uses_prior and a != "dcl",
        prior_negatives=cfg.uses_prior,
        dcl_weight=cfg.dcl_weight if a == "dcl" else 0.0,
    )


def sac_config(cfg: RunConfig) -> SACConfig:
    return SACConfig(
        hidden=cfg.sac_hidden,
        temperature=cfg.temperature,
        discount=cfg.discount,
        polyak=cfg.polyak,
        lr=cfg.lr,
        adam_betas=(cfg.adam_beta1, cfg.adam_beta2),
        batch_size=cfg.batch_size,
    )


# ---------------------------------------------------------------- expert recipe


@dataclass
class ExpertBundle:
    demos: TrajectorySet
    policy: object
    expert_ref: float


_EXPERT_CACHE: dict[tuple, ExpertBundle] = {}


def train_expert(env, steps: int, cfg: SACConfig, seed: int, warmup: int = 1000) -> ActorCritic:
    """Actor-critic trained on ``r_true`` in ``env``; uniform-random actions
    for the first ``warmup`` steps."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    ac = ActorCritic(env.realm.state_dim, env.action_dim, cfg)
    explore = RandomPolicy(env.action_dim, seed + 1)
    fields = {k: [] for k in ("states", "actions", "r_true", "next_states")}
    n = 0
    while n < steps:
        traj = rollout(env, explore if n < warmup else ac.as_policy())
        for k in fields:
            fields[k].append(getattr(traj, k))
        data = {k: np.concatenate(v) for k, v in fields.items()}
        for _ in range(len(traj)):
            i = rng.integers(0, len(data["r_true"]), size=cfg.batch_size)
            ac.agent_update(data["states"][i], data["actions"][i], data["r_true"][i], data["next_states"][i])
        n += len(traj)
    return ac


def expert_bundle(cfg: RunConfig) -> ExpertBundle:
    """Expert demonstrations in the source variant (cached per recipe)."""
    key = (cfg.realm, cfg.source_variant, cfg.expert_seed, cfg.expert_train_steps, cfg.sac_hidden, cfg.ref_episodes, cfg.buffer_scale, cfg.expert_path)
    if key in _EXPERT_CACHE:
        return _EXPERT_CACHE[key]
    caps = load_reference_sizes(cfg.realm, cfg.buffer_scale)
    if cfg.expert_path:
        demos = _load_set(cfg.expert_path, cfg.realm)
        policy = None
        expert_ref = demos.mean_return()
    elif cfg.realm == "binaryworld":
        demos, _ = binaryworld_reference()
        policy = lambda s: np.ones(1)  # noqa: E731  the demonstrated behaviour: always set y = 1
        expert_ref = demos.mean_return()
    else:
        with torch.random.fork_rng():
            env = make_env(cfg.realm, cfg.source_variant, cfg.expert_seed + 50_000)
            ac = train_expert(env, cfg.expert_train_steps, sac_config(cfg), cfg.expert_seed)
            policy = ac.as_policy(deterministic=True)
            demo_env = make_env(cfg.realm, cfg.source_variant, cfg.expert_seed + 60_000)
            demos = collect_policy(demo_env, policy, max(1, caps.expert // caps.horizon), domain=1)
            ref_env = make_env(cfg.realm, cfg.source_variant, cfg.expert_seed + 70_000)
            expert_ref = evaluate_policy(ref_env, policy, cfg.ref_episodes)
    bundle = ExpertBundle(demos, policy, expert_ref)
    _EXPERT_CACHE[key] = bundle
    return bundle


def score_scale(cfg: RunConfig) -> ScoreScale:
    """Random behaviour in the target variant is 0, the expert in its own
    (source) variant is 1."""
    bundle = expert_bundle(cfg)
    env = make_env(cfg.realm, cfg.effective_target, cfg.expert_seed + 80_000)
    random_ref = evaluate_policy(env, RandomPolicy(env.action_dim, cfg.expert_seed + 3), cfg.ref_episodes)
    return ScoreScale(random_ref=random_ref, expert_ref=bundle.expert_ref)


def _load_set(path: str, realm: str) -> TrajectorySet:
    if not Path(path).exists():
        raise ConfigurationError(f"missing trajectory file {path}")
    ts = load_trajectories(path)
    if ts.realm_id != realm:
        raise ConfigurationError(f"{path} holds {ts.realm_id} data, expected {realm}")
    return ts


def prior_sets(cfg: RunConfig) -> tuple[TrajectorySet, TrajectorySet]:
    """Random-behaviour data in the source (label 1) and target (label 0) variants."""
    if cfg.prior_expert_path or cfg.prior_agent_path:
        if not (cfg.prior_expert_path and cfg.prior_agent_path):
            raise ConfigurationError("both prior_expert_path and prior_agent_path are required")
        return _load_set(cfg.prior_expert_path, cfg.realm), _load_set(cfg.prior_agent_path, cfg.realm)
    caps = load_reference_sizes(cfg.realm, cfg.buffer_scale)
    n = (caps.prior // caps.horizon) * caps.horizon
    src = make_env(cfg.realm, cfg.source_variant, cfg.seed * 1000 + 11)
    tgt = make_env(cfg.realm, cfg.effective_target, cfg.seed * 1000 + 12)
    return collect_random(src, n, domain=1), collect_random(tgt, n, domain=0)


# ---------------------------------------------------------------- training


@dataclass
class EpochMetrics:
    epoch: int
    env_steps: int
    eval_return: float
    normalized_score: float
    best_so_far: float
    mi_expert_bits: float
    mi_prior_bits: float
    beta: float
    lam: float
    losses: dict[str, float] = field(default_factory=dict)

    def row(self) -> list:
        base = [
            self.epoch,
            self.env_steps,
            self.eval_return,
            self.normalized_score,
            self.best_so_far,
            self.mi_expert_bits,
            self.mi_prior_bits,
            self.beta,
            self.lam,
        ]
        return base + [self.losses.get(k, math.nan) for k in METRIC_COLUMNS[len(base):]]


@dataclass
class EpisodeCounts:
    disc_steps: int = 0
    mi_step_pairs: int = 0
    beta_updates: int = 0
    lambda_updates: int = 0
    agent_steps: int = 0
    horizon: int = 0


@dataclass
class RunArtifacts:
    config: RunConfig
    metrics: list[EpochMetrics]
    episode_counts: list[EpisodeCounts]
    scale: ScoreScale
    stack: DiscriminatorStack
    agent: ActorCritic
    penalty: PenaltyState
    buffers: dict[str, TrajectoryBuffer]
    mi_episode_means: list[float]
    diagnostic_bits: float = math.nan
    out_dir: Path | None = None

    @property
    def final_best(self) -> float:
        return self.metrics[-1].best_so_far

    @property
    def curve(self) -> list[float]:
        return [m.best_so_far for m in self.metrics]


def write_metrics(metrics: list[EpochMetrics], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in m.row()])
    return path


def read_metrics(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) for k, v in r.items()} for r in rows]


def _mean(xs) -> float:
    xs = [x for x in xs if x is not None and not math.isnan(x)]
    return float(np.mean(xs)) if xs else math.nan


class _Trainer:
    """State of one run; ``train`` drives it."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)
        realm = get_realm(cfg.realm)
        self.horizon = realm.horizon
        caps = load_reference_sizes(cfg.realm, cfg.buffer_scale)
        bundle = expert_bundle(cfg)
        self.scale = score_scale(cfg)
        self.env = make_env(cfg.realm, cfg.effective_target, cfg.seed * 1000 + 1)
        self.eval_env = make_env(cfg.realm, cfg.effective_target, cfg.seed * 1000 + 2)

        self.dcfg = disc_config(cfg)
        self.stack = DiscriminatorStack(realm.obs_shape, self.dcfg)
        self.penalty = PenaltyState(
            beta=cfg.beta_init, i_max_expert=cfg.i_max_expert, i_max_prior=cfg.i_max_prior, dual_step=cfg.dual_step
        )
        self.disc = DiscriminatorTrainer(self.stack, self.penalty)
        self.agent = ActorCritic(realm.state_dim, self.env.action_dim, sac_config(cfg))

        self.buffers = {
            "expert": TrajectoryBuffer("expert", caps.expert).load(bundle.demos),
            "agent": TrajectoryBuffer("agent", caps.agent),
        }
        if cfg.uses_prior:
            pe, ppi = prior_sets(cfg)
            self.buffers["prior_expert"] = TrajectoryBuffer("prior_expert", caps.prior).load(pe)
            self.buffers["prior_agent"] = TrajectoryBuffer("prior_agent", caps.prior).load(ppi)
        self.env_steps = 0
        self.counts: list[EpisodeCounts] = []
        self.mi_episode_means: list[float] = []
        self.last: dict[str, float] = {}

    # -- sampling helpers
    def _windows(self, kind: str):
        return self.buffers[kind].sample_windows(self.cfg.batch_size, self.rng).windows

    def _obs(self, kind: str):
        return self.buffers[kind].sample_observations(self.cfg.batch_size, self.rng)[0]

    def _sample_obs(self):
        if self.cfg.uses_prior:
            return self._obs("expert"), self._obs("agent"), self._obs("prior_expert"), self._obs("prior_agent")
        return self._obs("expert"), self._obs("agent"), None, None

    def episode(self) -> dict[str, float]:
        cfg, b = self.cfg, self.buffers
        traj = rollout(self.env, self.agent.as_policy())
        b["agent"].push(traj)
        self.env_steps += len(traj)
        counts = EpisodeCounts(horizon=len(traj))
        logs: dict[str, list[float]] = {}

        def log(key, value):
            logs.setdefault(key, []).append(value)

        est, est_p = [], []
        for _ in range(len(traj)):
            prior = (self._windows("prior_expert"), self._windows("prior_agent")) if cfg.uses_prior else (None, None)
            lb = self.disc.discriminator_step(self._windows("expert"), self._windows("agent"), *prior)
            counts.disc_steps += 1
            for key in ("j_g", "loss_beta", "loss_lambda", "loss_d", "accuracy"):
                log(key, getattr(lb, key))
            if self.disc.classifier is not None:
                log("dcl_accuracy", self.disc.dcl_step(self._sample_obs))
            ie, ip = self.disc.mi_learning_step(self._sample_obs)
            counts.mi_step_pairs += 1
            est.append(ie)
            if ip is not None:
                est_p.append(ip)

        mean_e = float(np.mean(est))
        mean_p = float(np.mean(est_p)) if est_p else None
        self.mi_episode_means.append(mean_e)
        if self.dcfg.use_expert_penalty:
            self.penalty.end_episode(mean_e, None)
            counts.beta_updates += 1
        if self.dcfg.use_prior_penalty:
            self.penalty.end_episode(None, mean_p)
            counts.lambda_updates += 1
        log("mi_expert", mean_e)
        log("mi_prior", mean_p if mean_p is not None else math.nan)

        self.stack.eval()
        for _ in range(len(traj)):
            tb = b["agent"].sample_transitions(cfg.batch_size, self.rng)
            with torch.no_grad():
                r = pseudo_rewards(self.stack, tb.windows).numpy()
            al = self.agent.agent_update(tb.states, tb.actions, r, tb.next_states)
            counts.agent_steps += 1
            log("loss_critic", al.critic)
            log("loss_actor", al.actor)
            log("pseudo_reward", float(r.mean()))
        self.counts.append(counts)
        out = {k: _mean(v) for k, v in logs.items()}
        self.last = out
        return out

    def evaluate(self) -> float:
        return evaluate_policy(self.eval_env, self.agent, self.cfg.eval_episodes)


def _dump_divergence(out_dir: Path | None, trainer: _Trainer, epoch: int, err: Exception) -> None:
    if out_dir is None:
        return
    info = {
        "error": str(err),
        "epoch": epoch,
        "env_steps": trainer.env_steps,
        "beta": trainer.penalty.beta,
        "lambda": trainer.penalty.lam,
        "last_episode_means": trainer.last,
        "recent_mi_expert": trainer.mi_episode_means[-10:],
    }
    (out_dir / "divergence.json").write_text(json.dumps(info, indent=2, default=float))
    save_checkpoint({"stack": trainer.stack, **trainer.agent.modules()}, out_dir / "checkpoints" / "diverged.bin")


def _dump_buffer(t: "_Trainer", kind: str, out_dir: Path) -> None:
    cfg, buf = t.cfg, t.buffers[kind]
    if not len(buf):
        return
    first = buf.trajectories[0]
    variant = cfg.source_variant if buf.domain else cfg.effective_target
    ts = TrajectorySet(cfg.realm, variant, t.horizon, get_realm(cfg.realm).obs_shape, first.states.shape[-1],
                       first.actions.shape[-1], buf.domain, buf.trajectories)
    save_trajectories(ts, out_dir / "data" / f"{kind}.traj")


def train(cfg: RunConfig) -> RunArtifacts:
    """Run the interleaved discriminator / MI / scheduler / agent loop.

    Every episode performs ``|tau|`` discriminator steps, each followed by one
    update of each statistics network; then one scheduler update from the
    episode-mean estimates; then ``|tau|`` agent updates on pseudo-rewards
    recomputed from the current discriminator.
    """
    torch.set_num_threads(1)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        from .config import snapshot_config

        snapshot_config(cfg, out_dir)
    t = _Trainer(cfg)
    if out_dir is not None:
        for kind in t.buffers:
            if kind != "agent":
                _dump_buffer(t, kind, out_dir)
        (out_dir / "score_scale.json").write_text(json.dumps(dataclasses.asdict(t.scale)))

    metrics: list[EpochMetrics] = []
    best = -math.inf

    def record(epoch: int, logs: dict[str, float]):
        nonlocal best
        ret = t.evaluate()
        score = normalize_score(ret, t.scale)
        best = max(best, score)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                env_steps=t.env_steps,
                eval_return=ret,
                normalized_score=score,
                best_so_far=best,
                mi_expert_bits=logs.get("mi_expert", math.nan),
                mi_prior_bits=logs.get("mi_prior", math.nan),
                beta=t.penalty.beta,
                lam=t.penalty.lam,
                losses={
                    "j_g": logs.get("j_g", math.nan),
                    "loss_beta": logs.get("loss_beta", math.nan),
                    "loss_lambda": logs.get("loss_lambda", math.nan),
                    "loss_d": logs.get("loss_d", math.nan),
                    "disc_accuracy": logs.get("accuracy", math.nan),
                    "loss_critic": logs.get("loss_critic", math.nan),
                    "loss_actor": logs.get("loss_actor", math.nan),
                    "pseudo_reward": logs.get("pseudo_reward", math.nan),
                },
            )
        )
        if out_dir is not None:
            write_metrics(metrics, out_dir / "metrics.csv")

    record(0, {})
    for epoch in range(1, cfg.epochs + 1):
        eps = []
        try:
            for _ in range(cfg.episodes_per_epoch):
                eps.append(t.episode())
        except FloatingPointError as err:
            _dump_divergence(out_dir, t, epoch, err)
            raise DivergenceError(f"training diverged in epoch {epoch}: {err}") from err
        keys = set().union(*eps)
        record(epoch, {k: _mean(e.get(k, math.nan) for e in eps) for k in keys})
        logger.info("epoch %d: score %.3f best %.3f beta %.3g", epoch, metrics[-1].normalized_score, best, t.penalty.beta)

    art = RunArtifacts(
        config=cfg,
        metrics=metrics,
        episode_counts=t.counts,
        scale=t.scale,
        stack=t.stack,
        agent=t.agent,
        penalty=t.penalty,
        buffers=t.buffers,
        mi_episode_means=t.mi_episode_means,
        out_dir=out_dir,
    )
    if cfg.diag_steps > 0 and len(t.buffers["agent"]):
        gen = torch.Generator().manual_seed(cfg.seed + 99)
        art.diagnostic_bits = mi_reward_diagnostic(t.stack.preprocessor, t.buffers["agent"], cfg.diag_steps, generator=gen).value
    if out_dir is not None:
        _dump_buffer(t, "agent", out_dir)
        save_checkpoint({"stack": t.stack, **t.agent.modules()}, out_dir / "checkpoints" / "final.bin")
        summary = {"final_best_so_far": art.final_best, "diagnostic_bits": art.diagnostic_bits, "beta": t.penalty.beta, "lambda": t.penalty.lam}
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return art


def load_run(run_dir: str | Path) -> tuple[RunConfig, DiscriminatorStack, ActorCritic]:
    """Rebuild the trained discriminator stack and agent of a run directory."""
    from .config import SNAPSHOT_NAME, parse_config

    run_dir = Path(run_dir)
    cfg = parse_config((run_dir / SNAPSHOT_NAME).read_text())
    realm = get_realm(cfg.realm)
    stack = DiscriminatorStack(realm.obs_shape, disc_config(cfg))
    action_dim = realm.variants[cfg.effective_target].embodiment.action_dim
    agent = ActorCritic(realm.state_dim, action_dim, sac_config(cfg))
    load_checkpoint({"stack": stack, **agent.modules()}, run_dir / "checkpoints" / "final.bin")
    stack.eval()
    return cfg, stack, agent


# ---------------------------------------------------------------- matrices


def run_label(cfg: RunConfig) -> str:
    return f"{cfg.algorithm}" if cfg.algorithm != "disentangail" or cfg.i_max_expert == 0.99 else f"disentangail_imax{cfg.i_max_expert:g}"


@dataclass
class MatrixRow:
    label: str
    config: RunConfig
    seeds: list[int]
    runs: list[RunArtifacts]
    failures: dict[int, str]
    curve_mean: list[float]
    curve_stderr: list[float]
    final_mean: float
    final_stderr: float
    stderr_flagged: bool
    diagnostic_mean: float = math.nan
    diagnostic_stderr: float = math.nan


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _seed_list(seeds) -> list[int]:
    out = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if not out:
        raise ConfigurationError("need at least one seed")
    return out


def run_matrix(configs: list[RunConfig], seeds, label_fn=run_label) -> list[MatrixRow]:
    """Every config under every seed. Failures are recorded per seed and the
    matrix continues. With a single seed the stderr is 0 and flagged."""
    seed_list = _seed_list(seeds)
    rows = []
    for base in configs:
        runs, failures = [], {}
        for s in seed_list:
            out = str(Path(base.out_dir) / label_fn(base) / f"seed{s}") if base.out_dir else ""
            try:
                runs.append(train(replace(base, seed=s, out_dir=out)))
            except Exception as err:  # recorded, matrix continues
                logger.error("run %s seed %d failed: %s", label_fn(base), s, err)
                failures[s] = f"{type(err).__name__}: {err}"
        n_epochs = max((len(r.curve) for r in runs), default=0)
        cm, cs = [], []
        for e in range(n_epochs):
            m, se = mean_stderr([r.curve[e] for r in runs if e < len(r.curve)])
            cm.append(m)
            cs.append(se)
        fm, fs = mean_stderr([r.final_best for r in runs])
        dm, ds = mean_stderr([r.diagnostic_bits for r in runs])
        rows.append(MatrixRow(label_fn(base), base, seed_list, runs, failures, cm, cs, fm, fs, len(runs) == 1, dm, ds))
    return rows


def imax_sweep(base: RunConfig, values, seeds, diag_steps: int = 2000) -> list[MatrixRow]:
    """The matrix over I_max(expert) values, each run also reporting the
    latent/true-reward diagnostic."""
    values = list(values)
    if not values:
        return []
    configs = [replace(base, i_max_expert=float(v), diag_steps=diag_steps or base.diag_steps) for v in values]
    return run_matrix(configs, seeds, label_fn=lambda c: f"imax{c.i_max_expert:g}")


# ---------------------------------------------------------------- static toy fit


@dataclass
class StaticFit:
    i_max: float
    seed: int
    accuracy: float
    mi_expert_trace: list[float]
    beta_trace: list[float]
    stack: DiscriminatorStack


def fit_binaryworld(i_max: float, seed: int, steps: int = 2000, batch_size: int = 128, draws: int = 256, latent_dim: int = 4) -> StaticFit:
    """Train the discriminator alone on the fixed toy buffers.

    The scheduler runs once per 3 steps (one toy episode). Held-out accuracy
    is the thresholded stochastic-path accuracy over every stored window with
    ``draws`` fresh noise samples each, so it reflects what the latent
    distribution can reveal rather than the noise-free mean.
    """
    torch.set_num_threads(1)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    expert, poor = binaryworld_reference()
    b_e = TrajectoryBuffer("expert", 12).load(expert)
    b_pi = TrajectoryBuffer("agent", 12)
    for traj in poor:
        b_pi.push(traj)
    cfg = DiscConfig(latent_dim=latent_dim, use_prior_penalty=False, prior_negatives=False)
    stack = DiscriminatorStack(get_realm("binaryworld").obs_shape, cfg)
    penalty = PenaltyState(i_max_expert=i_max)
    trainer = DiscriminatorTrainer(stack, penalty)

    def sample_obs():
        return b_e.sample_observations(batch_size, rng)[0], b_pi.sample_observations(batch_size, rng)[0], None, None

    horizon = get_realm("binaryworld").horizon
    est, trace, betas = [], [], []
    for j in range(steps):
        trainer.discriminator_step(b_e.sample_windows(batch_size, rng).windows, b_pi.sample_windows(batch_size, rng).windows)
        est.append(trainer.mi_learning_step(sample_obs)[0])
        if (j + 1) % horizon == 0:
            penalty.end_episode(float(np.mean(est)), None)
            trace.append(penalty.running_mi_expert)
            betas.append(penalty.beta)
            est = []
    we, _ = b_e.all_windows()
    wn, _ = b_pi.all_windows()
    acc = accuracy(stack, we, wn, stochastic=True, draws=draws)
    return StaticFit(i_max, seed, acc, trace, betas, stack)
