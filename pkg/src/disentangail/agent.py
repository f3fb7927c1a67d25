"""Soft actor-critic over the true low-dimensional state.

The learner never sees environment rewards: ``agent_update`` takes whatever
reward vector the caller computed (discriminator pseudo-rewards in training,
``r_true`` only in the expert recipe).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .envlab import rollout
from .errors import ContractError
from .netcore import mlp

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


@dataclass
class SACConfig:
    hidden: int = 64
    temperature: float = 0.2
    discount: float = 0.99
    polyak: float = 0.995
    lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 128


@dataclass
class AgentLosses:
    critic: float
    actor: float
    q_mean: float
    entropy: float


class SquashedGaussianPolicy(nn.Module):
    def __init__(self, state_dim: int, action_dim: int, hidden: int = 64):
        super().__init__()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.trunk = mlp([state_dim, hidden, hidden], "relu")
        self.head = nn.Linear(hidden, 2 * action_dim)

    def dist_params(self, s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = F.relu(self.trunk(s))
        mean, log_std = self.head(h).chunk(2, dim=-1)
        return mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, s: torch.Tensor, deterministic: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
        """Action in (-1, 1) and its log-density (with the tanh correction)."""
        mean, log_std = self.dist_params(s)
        if deterministic:
            u = mean
        else:
            u = mean + log_std.exp() * torch.randn_like(mean)
        a = torch.tanh(u)
        logp = (-0.5 * ((u - mean) / log_std.exp()) ** 2 - log_std - 0.5 * math.log(2 * math.pi)).sum(-1)
        # log(1 - tanh(u)^2), written stably
        logp = logp - (2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))).sum(-1)
        return a, logp


class QNetwork(nn.Module):
    def __init__(self, state_dim: int, action_dim: int, hidden: int = 64):
        super().__init__()
        self.net = mlp([state_dim + action_dim, hidden, hidden, 1], "relu")

    def forward(self, s: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([s, a], dim=-1)).squeeze(-1)


def polyak_update(target: nn.Module, online: nn.Module, rho: float) -> None:
    """``target <- rho * target + (1 - rho) * online``."""
    with torch.no_grad():
        for pt, p in zip(target.parameters(), online.parameters()):
            pt.mul_(rho).add_(p, alpha=1.0 - rho)


class ActorCritic:
    """Policy, twin critics and their lagged targets."""

    def __init__(self, state_dim: int, action_dim: int, cfg: SACConfig | None = None):
        self.cfg = cfg or SACConfig()
        c = self.cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.policy = SquashedGaussianPolicy(state_dim, action_dim, c.hidden)
        self.q1 = QNetwork(state_dim, action_dim, c.hidden)
        self.q2 = QNetwork(state_dim, action_dim, c.hidden)
        self.q1_target = copy.deepcopy(self.q1).requires_grad_(False)
        self.q2_target = copy.deepcopy(self.q2).requires_grad_(False)
        self.pi_opt = torch.optim.Adam(self.policy.parameters(), lr=c.lr, betas=c.adam_betas)
        self.q_opt = torch.optim.Adam(
            list(self.q1.parameters()) + list(self.q2.parameters()), lr=c.lr, betas=c.adam_betas
        )
        self.n_updates = 0

    def modules(self) -> dict[str, nn.Module]:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2, "q1_target": self.q1_target, "q2_target": self.q2_target}

    def _state(self, state) -> torch.Tensor:
        s = torch.as_tensor(np.asarray(state, dtype=np.float32))
        if s.shape[-1] != self.state_dim:
            raise ContractError(f"state dimension {s.shape[-1]} does not match {self.state_dim}")
        return s

    @torch.no_grad()
    def act(self, state, deterministic: bool = False) -> np.ndarray:
        s = self._state(state)
        single = s.dim() == 1
        a, _ = self.policy.sample(s[None] if single else s, deterministic)
        a = a.numpy().astype(np.float64)
        return a[0] if single else a

    def as_policy(self, deterministic: bool = False):
        return lambda state: self.act(state, deterministic)

    def critic_loss(self, s, a, r, s2, done) -> torch.Tensor:
        c = self.cfg
        with torch.no_grad():
            a2, logp2 = self.policy.sample(s2)
            q_next = torch.min(self.q1_target(s2, a2), self.q2_target(s2, a2)) - c.temperature * logp2
            target = r + c.discount * (1.0 - done) * q_next
        return F.mse_loss(self.q1(s, a), target) + F.mse_loss(self.q2(s, a), target)

    def actor_loss(self, s) -> tuple[torch.Tensor, torch.Tensor]:
        a, logp = self.policy.sample(s)
        q = torch.min(self.q1(s, a), self.q2(s, a))
        return (self.cfg.temperature * logp - q).mean(), logp

    def agent_update(self, states, actions, rewards, next_states, dones=None) -> AgentLosses:
        """One critic step, one actor step and one target update.

        ``dones`` marks true terminations; fixed-horizon truncation is not a
        termination, so the default bootstraps every transition.
        """
        s, s2 = self._state(states), self._state(next_states)
        if s.dim() != 2 or s.shape[0] < 2:
            raise ContractError("agent_update needs a batch of at least 2 transitions")
        a = torch.as_tensor(np.asarray(actions, dtype=np.float32))
        r = torch.as_tensor(np.asarray(rewards, dtype=np.float32)).reshape(-1)
        d = torch.zeros_like(r) if dones is None else torch.as_tensor(np.asarray(dones, dtype=np.float32)).reshape(-1)
        if not (a.shape[0] == r.shape[0] == d.shape[0] == s.shape[0] == s2.shape[0]):
            raise ContractError("transition fields have inconsistent batch sizes")

        q_loss = self.critic_loss(s, a, r, s2, d)
        self.q_opt.zero_grad()
        q_loss.backward()
        self.q_opt.step()

        for p in list(self.q1.parameters()) + list(self.q2.parameters()):
            p.requires_grad_(False)
        try:
            pi_loss, logp = self.actor_loss(s)
            self.pi_opt.zero_grad()
            pi_loss.backward()
            self.pi_opt.step()
        finally:
            for p in list(self.q1.parameters()) + list(self.q2.parameters()):
                p.requires_grad_(True)

        polyak_update(self.q1_target, self.q1, self.cfg.polyak)
        polyak_update(self.q2_target, self.q2, self.cfg.polyak)
        self.n_updates += 1
        with torch.no_grad():
            q_mean = float(self.q1(s, a).mean())
        loss_q, loss_pi = float(q_loss.detach()), float(pi_loss.detach())
        if not (math.isfinite(loss_q) and math.isfinite(loss_pi)):
            raise FloatingPointError(f"non-finite agent loss (critic {loss_q}, actor {loss_pi})")
        return AgentLosses(loss_q, loss_pi, q_mean, float(-logp.detach().mean()))


def evaluate_policy(env, policy, n_eps: int = 5) -> float:
    """Mean ``r_true`` return over ``n_eps`` full episodes. An
    ``ActorCritic`` is evaluated with deterministic actions."""
    if isinstance(policy, ActorCritic):
        policy = policy.as_policy(deterministic=True)
    returns = [rollout(env, policy).true_return for _ in range(n_eps)]
    return float(np.mean(returns))
