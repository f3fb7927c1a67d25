"""Command-line entry point: ``disentangail <verb> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import orchestrator as orch
from .buffers import TrajectoryBuffer
from .config import SNAPSHOT_NAME, parse_config, resolve_config, snapshot_config
from .envlab import load_trajectories, save_trajectories
from .errors import ConfigurationError, ContractError, DivergenceError, UsageError
from .evalrep import emit_report, latent_coupling, mi_reward_diagnostic, series_from_curves

VERBS = (
    "collect-expert",
    "collect-prior",
    "train",
    "matrix",
    "ablate-imax",
    "ablate-disguise",
    "couple",
    "diagnose-mi",
    "report",
)

DISGUISE_VARIANTS = ("disentangail", "no_sn", "no_2st", "no_prev")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disentangail", description="Domain-invariant imitation from observations.")
    sub = p.add_subparsers(dest="verb", metavar="verb", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        return sp

    with_config(sub.add_parser("collect-expert", help="train a source-domain expert and record demonstrations"))
    with_config(sub.add_parser("collect-prior", help="record random behaviour in both domains"))
    with_config(sub.add_parser("train", help="one training run"))
    sp = with_config(sub.add_parser("matrix", help="algorithm variants x seeds"))
    sp.add_argument("--algorithms", default="disentangail,no_prior,dcl,no_regularization,source_upper_bound")
    sp.add_argument("--seeds", type=int, default=5)
    sp = with_config(sub.add_parser("ablate-imax", help="sweep the expert-constraint threshold"))
    sp.add_argument("--values", default="0.99,0.25,0.01")
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--diag-steps", type=int, default=2000)
    sp = with_config(sub.add_parser("ablate-disguise", help="spectral-norm / double-network ablations"))
    sp.add_argument("--seeds", type=int, default=5)
    sp = sub.add_parser("couple", help="nearest latent matches between domains for a trained run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--k", type=int, default=4)
    sp = sub.add_parser("diagnose-mi", help="latent / true-reward information for a trained run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--steps", type=int, default=2000)
    sp = sub.add_parser("report", help="curves and summary table from run directories")
    sp.add_argument("--runs", required=True, help="comma-separated run directories (or matrix roots)")
    sp.add_argument("--out", required=True)
    return p


def _config(args, **extra) -> orch.RunConfig:
    return resolve_config(args.config, args.overrides, seed=args.seed, **extra)


def _write_rows(rows: list[orch.MatrixRow], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "matrix.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "n_runs", "final_mean", "final_stderr", "stderr_flagged", "diagnostic_mean", "diagnostic_stderr", "failures"])
        for r in rows:
            w.writerow([r.label, len(r.runs), r.final_mean, r.final_stderr, r.stderr_flagged, r.diagnostic_mean, r.diagnostic_stderr, json.dumps(r.failures)])
    series = [series_from_curves(r.label, [run.curve for run in r.runs]) for r in rows if r.runs]
    if series:
        emit_report(series, out / "report")
    for r in rows:
        flag = " (single seed, stderr 0)" if r.stderr_flagged else ""
        print(f"{r.label}: {r.final_mean:.3f} ± {r.final_stderr:.3f}{flag}")


def _collect_expert(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    bundle = orch.expert_bundle(cfg)
    snapshot_config(cfg, out)
    path = save_trajectories(bundle.demos, out / "expert.traj")
    print(f"wrote {len(bundle.demos)} demonstrations to {path} (expert return {bundle.expert_ref:.3f})")


def _collect_prior(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    pe, ppi = orch.prior_sets(cfg)
    snapshot_config(cfg, out)
    save_trajectories(pe, out / "prior_expert.traj")
    save_trajectories(ppi, out / "prior_agent.traj")
    print(f"wrote {pe.n_observations} + {ppi.n_observations} prior observations to {out}")


def _train(args) -> None:
    cfg = _config(args, out_dir=args.out)
    art = orch.train(cfg)
    print(f"final best-so-far {art.final_best:.3f}; metrics in {Path(args.out) / 'metrics.csv'}")


def _matrix(args) -> None:
    base = _config(args, out_dir=args.out)
    configs = [replace(base, algorithm=a) for a in _csv_list(args.algorithms)]
    _write_rows(orch.run_matrix(configs, args.seeds), Path(args.out))


def _ablate_imax(args) -> None:
    base = _config(args, out_dir=args.out)
    values = [float(v) for v in _csv_list(args.values)]
    rows = orch.imax_sweep(base, values, args.seeds, diag_steps=args.diag_steps)
    if not rows:
        print("no values given; empty table")
    _write_rows(rows, Path(args.out))


def _ablate_disguise(args) -> None:
    base = _config(args, out_dir=args.out)
    _write_rows(orch.run_matrix([replace(base, algorithm=a) for a in DISGUISE_VARIANTS], args.seeds), Path(args.out))


def _couple(args) -> None:
    run = Path(args.run)
    cfg, stack, _ = orch.load_run(run)
    expert = load_trajectories(run / "data" / "expert.traj")
    agent = load_trajectories(run / "data" / "agent.traj")
    set_a = np.concatenate([t.obs for t in expert])
    set_b = np.concatenate([t.obs for t in agent])
    rng = np.random.default_rng(cfg.seed)
    queries = sorted(rng.choice(len(set_a), size=min(args.k, len(set_a)), replace=False).tolist())
    matches = latent_coupling(stack.preprocessor, set_a, set_b, k=args.k, query_indices=queries)
    with open(run / "coupling.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["expert_index", "agent_index", "l1_distance"])
        for m in matches:
            w.writerow([m.query_index, m.match_index, f"{m.distance:.6f}"])
            print(f"expert obs {m.query_index} -> agent obs {m.match_index} (L1 {m.distance:.4f})")


def _diagnose(args) -> None:
    run = Path(args.run)
    cfg, stack, _ = orch.load_run(run)
    ts = load_trajectories(run / "data" / "agent.traj")
    buf = TrajectoryBuffer("agent", ts.n_observations)
    for t in ts:
        buf.push(t)
    est = mi_reward_diagnostic(stack.preprocessor, buf, args.steps, generator=torch.Generator().manual_seed(cfg.seed + 99))
    (run / "diagnostic.json").write_text(json.dumps({"mi_latent_reward_bits": est.value, "steps": args.steps}))
    print(f"I(z; r_true) = {est.value:.4f} bits")


def _run_dirs(spec: str) -> list[Path]:
    dirs = []
    for entry in _csv_list(spec):
        root = Path(entry)
        found = sorted(p.parent for p in root.rglob("metrics.csv"))
        if not found:
            raise ConfigurationError(f"no metrics.csv under {root}")
        dirs.extend(found)
    return dirs


def _report(args) -> None:
    groups: dict[str, list[list[float]]] = {}
    for d in _run_dirs(args.runs):
        cfg = parse_config((d / SNAPSHOT_NAME).read_text())
        rows = orch.read_metrics(d / "metrics.csv")
        groups.setdefault(orch.run_label(cfg), []).append([r["best_so_far"] for r in rows])
    series = [series_from_curves(label, curves) for label, curves in groups.items()]
    paths = emit_report(series, args.out)
    print(Path(paths["text"]).read_text(), end="")


_DISPATCH = {
    "collect-expert": _collect_expert,
    "collect-prior": _collect_prior,
    "train": _train,
    "matrix": _matrix,
    "ablate-imax": _ablate_imax,
    "ablate-disguise": _ablate_disguise,
    "couple": _couple,
    "diagnose-mi": _diagnose,
    "report": _report,
}


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage / help
        return int(exc.code or 0)
    try:
        _DISPATCH[args.verb](args)
    except (ConfigurationError, ContractError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
