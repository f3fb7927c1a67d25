"""Score normalization, running-best curves, latent coupling, the
latent/true-reward diagnostic and report emission."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import ContractError
from .miest import MIEstimate, StatisticsNetwork, evaluate_mine, train_mine


@dataclass(frozen=True)
class ScoreScale:
    random_ref: float
    expert_ref: float

    def __post_init__(self):
        if not (math.isfinite(self.random_ref) and math.isfinite(self.expert_ref)) or self.expert_ref == self.random_ref:
            raise ContractError(f"degenerate score scale {self.random_ref} -> {self.expert_ref}")


def normalize_score(raw: float, scale: ScoreScale) -> float:
    """0 for random behaviour, 1 for the expert; unbounded on both sides."""
    return (raw - scale.random_ref) / (scale.expert_ref - scale.random_ref)


def best_so_far(curve: Sequence[float]) -> list[float]:
    if len(curve) == 0:
        raise ContractError("empty curve")
    return [float(x) for x in np.maximum.accumulate(np.asarray(curve, dtype=float))]


# ---------------------------------------------------------------- latent coupling


@dataclass
class Coupling:
    query_index: int
    match_index: int
    distance: float


@torch.no_grad()
def _mean_latents(preprocessor, obs) -> torch.Tensor:
    o = torch.as_tensor(np.asarray(obs, dtype=np.float32))
    return preprocessor(o).mean.double()


def latent_coupling(preprocessor, set_a, set_b, k: int = 4, query_indices: Sequence[int] | None = None) -> list[Coupling]:
    """For ``k`` observations of ``set_a`` (the first ``k`` unless
    ``query_indices`` is given), the ``set_b`` observation whose mean latent
    is nearest in L1. Ties go to the lowest index in ``set_b``."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise ContractError("coupling needs two non-empty observation sets")
    queries = list(range(min(k, len(set_a)))) if query_indices is None else list(query_indices)
    # one forward pass, so identical observations get bit-identical latents
    z = _mean_latents(preprocessor, np.concatenate([np.asarray(set_a)[queries], np.asarray(set_b)]))
    za, zb = z[: len(queries)], z[len(queries):]
    dist = torch.cdist(za, zb, p=1)
    out = []
    for row, q in enumerate(queries):
        d = dist[row]
        best = int(torch.nonzero(d == d.min())[0])  # first minimum
        out.append(Coupling(q, best, float(d[best])))
    return out


# ---------------------------------------------------------------- diagnostic


def mi_reward_diagnostic(
    preprocessor,
    buffer,
    n_steps: int = 2000,
    batch_size: int = 256,
    units: str = "bits",
    generator: torch.Generator | None = None,
    hidden: int = 32,
) -> MIEstimate:
    """DV estimate of I(z_hat; r_true) over every observation in ``buffer``.

    A fresh statistics network is fitted on mean latents paired with the
    standardized true reward (an invertible map, so the information is
    unchanged); training-time statistics networks are never touched.
    """
    windows, r_true = buffer.all_windows()
    obs = windows[:, 0]  # the newest frame is the observation itself
    z = _mean_latents(preprocessor, obs).float()
    r = torch.as_tensor(np.asarray(r_true, dtype=np.float32))
    std = r.std()
    c = (r - r.mean()) / std if std > 0 else r - r.mean()
    gen = generator or torch.Generator().manual_seed(0)
    n = z.shape[0]

    def sampler():
        idx = torch.randint(0, n, (min(batch_size, n),), generator=gen)
        return z[idx], c[idx]

    with torch.random.fork_rng():
        torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
        T = StatisticsNetwork(z.shape[1], 1, hidden)
        train_mine(T, sampler, n_steps, generator=gen)
    return evaluate_mine(T, z, c, units, generator=gen)


# ---------------------------------------------------------------- reports


def format_pm(mean: float, stderr: float) -> str:
    return f"{mean:.3f} ± {stderr:.3f}"


@dataclass
class ReportSeries:
    label: str
    curve_mean: list[float]
    curve_stderr: list[float]
    final_mean: float
    final_stderr: float
    n_runs: int


def series_from_curves(label: str, curves: Sequence[Sequence[float]]) -> ReportSeries:
    if not curves:
        raise ContractError("no runs for series " + label)
    n = min(len(c) for c in curves)
    arr = np.asarray([list(c)[:n] for c in curves], dtype=float)
    mean = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else np.zeros(n)
    return ReportSeries(label, mean.tolist(), se.tolist(), float(mean[-1]), float(se[-1]), len(arr))


def emit_report(series: Sequence[ReportSeries], out_dir: str | Path, title: str = "") -> dict[str, Path]:
    """Curve figure with mean +- stderr bands plus the final-score table as
    CSV and monospace text."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for s in series:
        x = np.arange(len(s.curve_mean))
        m, e = np.asarray(s.curve_mean), np.asarray(s.curve_stderr)
        ax.plot(x, m, marker="o" if len(x) == 1 else None, label=s.label)
        ax.fill_between(x, m - e, m + e, alpha=0.25)
    ax.set_xlabel("epoch")
    ax.set_ylabel("normalized score (best so far)")
    if title:
        ax.set_title(title)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    png = out_dir / "curves.png"
    fig.savefig(png, dpi=100)
    plt.close(fig)

    table_csv = out_dir / "summary.csv"
    with open(table_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "n_runs", "final_mean", "final_stderr", "final"])
        for s in series:
            w.writerow([s.label, s.n_runs, f"{s.final_mean:.6f}", f"{s.final_stderr:.6f}", format_pm(s.final_mean, s.final_stderr)])
    width = max([len("variant")] + [len(s.label) for s in series])
    lines = [f"{'variant':<{width}}  runs  final"]
    lines += [f"{s.label:<{width}}  {s.n_runs:>4}  {format_pm(s.final_mean, s.final_stderr)}" for s in series]
    table_txt = out_dir / "summary.txt"
    table_txt.write_text("\n".join(lines) + "\n")
    return {"figure": png, "csv": table_csv, "text": table_txt}
