"""Donsker-Varadhan mutual information estimation.

Estimates are computed in nats and converted on request; the default reporting
unit is bits so that constraint thresholds read naturally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ContractError
from .netcore import mlp

LN2 = math.log(2.0)


@dataclass
class MIEstimate:
    value: float
    units: str = "bits"
    n_joint: int = 0
    n_marginal: int = 0

    def to(self, units: str) -> "MIEstimate":
        if units == self.units:
            return self
        nats = self.value * LN2 if self.units == "bits" else self.value
        value = nats / LN2 if units == "bits" else nats
        return MIEstimate(value, units, self.n_joint, self.n_marginal)


def nats_to(value, units: str):
    if units == "nats":
        return value
    if units == "bits":
        return value / LN2
    raise ContractError(f"unknown units {units!r}")


class StatisticsNetwork(nn.Module):
    """T(z, c) -> scalar; ``c`` is the conditioning variable (domain label,
    reward, ...). Two tanh hidden layers."""

    def __init__(self, z_dim: int, c_dim: int = 1, hidden: int = 32):
        super().__init__()
        self.net = mlp([z_dim + c_dim, hidden, hidden, 1], "tanh")

    def forward(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        if c.dim() == 1:
            c = c[:, None]
        return self.net(torch.cat([z, c.to(z.dtype)], dim=-1)).squeeze(-1)


def shuffle_labels(c: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """Uniform random permutation of the conditioning variable within the
    batch (fixed points allowed), which keeps both empirical marginals."""
    return c[torch.randperm(c.shape[0], generator=generator)]


def dv_bound(t_joint: torch.Tensor, t_marginal: torch.Tensor) -> torch.Tensor:
    """``mean(T_joint) - log mean(exp(T_marginal))`` in nats, max-stabilized."""
    if t_joint.numel() == 0 or t_marginal.numel() == 0:
        raise ContractError("empty batch")
    m = t_marginal.max().detach()
    lme = m + torch.log(torch.mean(torch.exp(t_marginal - m)))
    return t_joint.mean() - lme


def dv_objective(T: nn.Module, z: torch.Tensor, c: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """Differentiable DV estimate (nats) on one batch; marginal pairs come from shuffling ``c``."""
    if z.shape[0] == 0:
        raise ContractError("empty batch")
    return dv_bound(T(z, c), T(z, shuffle_labels(c, generator)))


def dv_lower_bound(T: nn.Module, joint, marginal, units: str = "bits") -> MIEstimate:
    """Evaluate the bound given explicit joint and marginal pair sets ``(z, c)``."""
    zj, cj = joint
    zm, cm = marginal
    if len(zj) == 0 or len(zm) == 0:
        raise ContractError("empty batch")
    with torch.no_grad():
        nats = float(dv_bound(T(zj, cj), T(zm, cm)))
    return MIEstimate(nats_to(nats, units), units, len(zj), len(zm))


class MineTrainer:
    """One statistics network and its Adam optimizer."""

    def __init__(self, T: nn.Module, lr: float = 1e-3, betas=(0.9, 0.999)):
        self.T = T
        self.opt = torch.optim.Adam(T.parameters(), lr=lr, betas=betas)

    def step(self, z: torch.Tensor, c: torch.Tensor, generator: torch.Generator | None = None) -> float:
        """One ascent step on the DV objective; returns the pre-step estimate in nats."""
        return mine_step(self, [(z, c)], generator)


def mine_step(trainer: MineTrainer, batches, generator: torch.Generator | None = None) -> float:
    """Ascend the summed DV objective over ``batches`` (list of ``(z, c)``)
    for this network only. Returns the summed pre-step estimate (nats); the
    loss is its negative."""
    estimates = [dv_objective(trainer.T, z.detach(), c, generator) for z, c in batches]
    total = torch.stack(estimates).sum()
    trainer.opt.zero_grad()
    (-total).backward()
    trainer.opt.step()
    return float(total.detach())


class StatNetPair(nn.Module):
    """Two independently initialized statistics networks."""

    def __init__(self, z_dim: int, c_dim: int = 1, hidden: int = 32, double: bool = True):
        super().__init__()
        self.t1 = StatisticsNetwork(z_dim, c_dim, hidden)
        self.t2 = StatisticsNetwork(z_dim, c_dim, hidden) if double else None

    @property
    def members(self) -> list[nn.Module]:
        return [t for t in (self.t1, self.t2) if t is not None]


@dataclass
class DoubleEstimate:
    value: torch.Tensor  # nats, differentiable w.r.t. z
    per_network: tuple[float, ...]
    winner: int


def double_estimate(pair: StatNetPair, z: torch.Tensor, c: torch.Tensor, generator: torch.Generator | None = None) -> DoubleEstimate:
    """Max of the member estimates on one shared batch (same shuffle).

    Gradients reach ``z`` only through the winning network; statistics-network
    parameters receive no gradient.
    """
    if z.shape[0] == 0:
        raise ContractError("empty batch")
    c_marg = shuffle_labels(c, generator)
    values = []
    for T in pair.members:
        req = [p.requires_grad for p in T.parameters()]
        for p in T.parameters():
            p.requires_grad_(False)
        try:
            values.append(dv_bound(T(z, c), T(z, c_marg)))
        finally:
            for p, r in zip(T.parameters(), req):
                p.requires_grad_(r)
    stacked = torch.stack(values)
    winner = int(torch.argmax(stacked.detach()))
    return DoubleEstimate(values[winner], tuple(float(v) for v in stacked.detach()), winner)


def max_estimate(values) -> float:
    return float(max(values))


def exact_discrete_mi(joint_counts, units: str = "bits") -> MIEstimate:
    """Plug-in mutual information of a contingency table (rows: v, cols: d)."""
    counts = np.asarray(joint_counts, dtype=float)
    if counts.ndim != 2 or (counts < 0).any():
        raise ContractError("counts must be a non-negative 2-D table")
    total = counts.sum()
    if total <= 0:
        raise ContractError("all-zero table")
    p = counts / total
    pv = p.sum(axis=1, keepdims=True)
    pd = p.sum(axis=0, keepdims=True)
    nz = p > 0
    nats = float(np.sum(p[nz] * np.log(p[nz] / (pv @ pd)[nz])))
    return MIEstimate(nats_to(nats, units), units, int(total), int(total))


def contingency(values, labels) -> np.ndarray:
    """Count table of discrete ``values`` against discrete ``labels``."""
    values = np.asarray(values)
    labels = np.asarray(labels)
    vs, vi = np.unique(values, return_inverse=True, axis=0) if values.ndim > 1 else np.unique(values, return_inverse=True)
    ls, li = np.unique(labels, return_inverse=True)
    table = np.zeros((len(vs), len(ls)))
    np.add.at(table, (vi.reshape(-1), li.reshape(-1)), 1)
    return table


def gaussian_mi(rho: float) -> float:
    """Closed-form MI (nats) of a standard bivariate Gaussian with correlation rho."""
    return -0.5 * math.log(1.0 - rho**2)


def train_mine(
    T: nn.Module,
    sampler,
    n_steps: int,
    lr: float = 1e-3,
    generator: torch.Generator | None = None,
) -> MineTrainer:
    """Fit ``T`` on fresh batches ``(z, c) = sampler()`` for ``n_steps``."""
    trainer = MineTrainer(T, lr=lr)
    for _ in range(n_steps):
        z, c = sampler()
        trainer.step(z, c, generator)
    return trainer


def evaluate_mine(T: nn.Module, z: torch.Tensor, c: torch.Tensor, units: str = "bits", generator: torch.Generator | None = None) -> MIEstimate:
    """DV estimate on a (typically large) evaluation batch."""
    with torch.no_grad():
        nats = float(dv_objective(T, z, c, generator))
    return MIEstimate(nats_to(nats, units), units, z.shape[0], z.shape[0])
