"""Constrained observation discriminator ``D = S o P``.

``P`` (the preprocessor) maps one observation to a diagonal-Gaussian latent,
``S`` (the invariant discriminator) scores the concatenated latents of a
newest-first 4-window. Mutual information between single latents and domain
labels is penalized through a pair of statistics networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .constraints import PenaltyState, loss_beta, loss_lambda
from .envlab import WINDOW
from .errors import ConfigurationError, ContractError
from .miest import MineTrainer, StatNetPair, double_estimate, dv_objective, nats_to
from .netcore import LatentRep, SNLinear, gaussian_head, mlp, sample_latent

PROB_CLIP = 1e-6
LOGIT_CLIP = math.log((1.0 - PROB_CLIP) / PROB_CLIP)


class Preprocessor(nn.Module):
    """Observation -> Gaussian latent. ``arch='mlp'`` flattens the raster;
    ``arch='conv'`` uses two 3x3 conv/tanh/max-pool blocks."""

    def __init__(self, obs_shape, latent_dim: int = 4, hidden: int = 32, arch: str = "mlp"):
        super().__init__()
        self.obs_shape = tuple(obs_shape)
        self.latent_dim = latent_dim
        h, w, c = self.obs_shape
        if arch == "mlp":
            self.body = nn.Sequential(nn.Flatten(), mlp([h * w * c, hidden, hidden, 2 * latent_dim], "tanh"))
        elif arch == "conv":
            if h < 4 or w < 4:
                raise ConfigurationError("conv preprocessor needs observations of at least 4x4 pixels")
            self.body = nn.Sequential(
                nn.Conv2d(c, 8, 3, padding=1),
                nn.Tanh(),
                nn.MaxPool2d(2),
                nn.Conv2d(8, 8, 3, padding=1),
                nn.Tanh(),
                nn.MaxPool2d(2),
                nn.Flatten(),
                nn.Linear(8 * (h // 4) * (w // 4), 2 * latent_dim),
            )
        else:
            raise ConfigurationError(f"unknown preprocessor arch {arch!r}")
        self.arch = arch

    def forward(self, obs: torch.Tensor) -> LatentRep:
        if self.arch == "conv":
            obs = obs.permute(0, 3, 1, 2)
        return gaussian_head(self.body(obs))


class InvariantDiscriminator(nn.Module):
    """Two ReLU layers over the stacked latent; returns logits."""

    def __init__(self, in_dim: int, hidden: int = 32, spectral_norm: bool = True, zero_init_output: bool = False):
        super().__init__()
        self.net = mlp([in_dim, hidden, hidden, 1], "relu", linear=SNLinear)
        for layer in self.sn_layers:
            layer.sn_enabled = spectral_norm
        if zero_init_output:
            nn.init.zeros_(self.net[-1].weight)
            nn.init.zeros_(self.net[-1].bias)

    @property
    def sn_layers(self) -> list[SNLinear]:
        return [m for m in self.net if isinstance(m, SNLinear)]

    def forward(self, zhat: torch.Tensor) -> torch.Tensor:
        return self.net(zhat).squeeze(-1)


@dataclass
class DiscConfig:
    latent_dim: int = 4
    hidden: int = 32
    arch: str = "mlp"
    spectral_norm: bool = True
    double_stat: bool = True
    stat_hidden: int = 32
    lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    units: str = "bits"
    use_expert_penalty: bool = True
    use_prior_penalty: bool = True
    prior_negatives: bool = True
    dcl_weight: float = 0.0
    zero_init_output: bool = False


class DiscriminatorStack(nn.Module):
    def __init__(self, obs_shape, cfg: DiscConfig | None = None):
        super().__init__()
        self.cfg = cfg or DiscConfig()
        c = self.cfg
        self.preprocessor = Preprocessor(obs_shape, c.latent_dim, c.hidden, c.arch)
        self.invariant = InvariantDiscriminator(WINDOW * c.latent_dim, c.hidden, c.spectral_norm, c.zero_init_output)
        self.stat_pair = StatNetPair(c.latent_dim, 1, c.stat_hidden, c.double_stat)

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    def encode(self, windows: torch.Tensor, stochastic: bool) -> tuple[torch.Tensor, LatentRep]:
        """Latents ``(B, 4, m)`` for windows ``(B, 4, h, w, c)``."""
        if windows.dim() < 2 or windows.shape[1] != WINDOW:
            raise ContractError(f"expected windows of length {WINDOW}, got shape {tuple(windows.shape)}")
        b = windows.shape[0]
        rep = self.preprocessor(windows.reshape(b * WINDOW, *windows.shape[2:]))
        noise = torch.randn_like(rep.mean) if stochastic else torch.zeros_like(rep.mean)
        z = sample_latent(rep, noise)
        rep.sample = z
        return z.reshape(b, WINDOW, -1), rep

    def logits(self, windows: torch.Tensor, stochastic: bool) -> torch.Tensor:
        z, _ = self.encode(windows, stochastic)
        return self.invariant(z.reshape(z.shape[0], -1))

    def discriminate(self, windows, stochastic: bool = False) -> torch.Tensor:
        """Expert probability for one window ``(4, ...)`` or a batch ``(B, 4, ...)``."""
        w = as_tensor(windows)
        single = w.dim() == len(self.preprocessor.obs_shape) + 1
        if single:
            w = w[None]
        p = torch.sigmoid(self.logits(w, stochastic))
        return p[0] if single else p


def as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=torch.float32)


# ---------------------------------------------------------------- objectives


def gail_objective(logits_expert: torch.Tensor, logits_negative: torch.Tensor) -> torch.Tensor:
    """``mean log S(expert) + mean log(1 - S(negative))`` from logits."""
    if logits_expert.numel() == 0:
        raise ContractError("empty expert batch")
    return F.logsigmoid(logits_expert).mean() + F.logsigmoid(-logits_negative).mean()


def stack_gail_objective(stack: DiscriminatorStack, batch_e, batch_pi, batch_priors=(), stochastic: bool = True) -> torch.Tensor:
    """GAIL objective for window batches; prior windows join the agent
    windows as extra negatives at equal per-sample weight."""
    le = stack.logits(as_tensor(batch_e), stochastic)
    negs = [as_tensor(batch_pi)] + [as_tensor(b) for b in batch_priors]
    ln = stack.logits(torch.cat(negs), stochastic)
    return gail_objective(le, ln)


def log_odds(p: torch.Tensor) -> torch.Tensor:
    p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
    return torch.log(p) - torch.log1p(-p)


@torch.no_grad()
def pseudo_rewards(stack: DiscriminatorStack, windows) -> torch.Tensor:
    """``log D_det - log(1 - D_det)`` with the noise set to zero and D
    clipped to ``[1e-6, 1 - 1e-6]``; batched over windows ``(B, 4, ...)``."""
    logits = stack.logits(as_tensor(windows), stochastic=False)
    return logits.clamp(-LOGIT_CLIP, LOGIT_CLIP)


def pseudo_reward(stack: DiscriminatorStack, window) -> float:
    return float(pseudo_rewards(stack, as_tensor(window)[None])[0])


@torch.no_grad()
def accuracy(stack: DiscriminatorStack, windows_e, windows_neg, stochastic: bool = True, draws: int = 1) -> float:
    """Fraction of windows classified on the correct side of 0.5, averaged
    over ``draws`` latent samples per window (expert and negative sets
    weighted equally)."""
    we, wn = as_tensor(windows_e), as_tensor(windows_neg)
    acc_e = acc_n = 0.0
    for _ in range(draws):
        acc_e += float((stack.logits(we, stochastic) > 0).float().mean())
        acc_n += float((stack.logits(wn, stochastic) <= 0).float().mean())
    return 0.5 * (acc_e + acc_n) / draws


def _labels(n_pos: int, n_neg: int) -> torch.Tensor:
    return torch.cat([torch.ones(n_pos), torch.zeros(n_neg)])


# ---------------------------------------------------------------- training


@dataclass
class LossBreakdown:
    loss_d: float = 0.0
    j_g: float = 0.0
    loss_beta: float = 0.0
    loss_lambda: float = 0.0
    j_dcl: float = 0.0
    mi_expert: float = float("nan")
    mi_prior: float = float("nan")
    accuracy: float = float("nan")
    extras: dict = field(default_factory=dict)


class _Frozen:
    """Temporarily stop gradients into a module's parameters."""

    def __init__(self, *modules: nn.Module):
        self.params = [p for m in modules if m is not None for p in m.parameters()]

    def __enter__(self):
        self.flags = [p.requires_grad for p in self.params]
        for p in self.params:
            p.requires_grad_(False)

    def __exit__(self, *exc):
        for p, f in zip(self.params, self.flags):
            p.requires_grad_(f)


class DomainClassifier(nn.Module):
    """Domain-confusion baseline head on single latents; returns logits."""

    def __init__(self, latent_dim: int, hidden: int = 32):
        super().__init__()
        self.net = mlp([latent_dim, hidden, hidden, 1], "relu")

    def forward(self, z):
        return self.net(z).squeeze(-1)


def dcl_objective(classifier: nn.Module, z_pos: torch.Tensor, z_neg: torch.Tensor) -> torch.Tensor:
    """``mean log C(z | expert domain) + mean log(1 - C(z | agent domain))``."""
    return F.logsigmoid(classifier(z_pos)).mean() + F.logsigmoid(-classifier(z_neg)).mean()


class DiscriminatorTrainer:
    """Owns the discriminator, statistics-network and (optional) domain
    classifier optimizers and performs the learning steps of one iteration."""

    def __init__(self, stack: DiscriminatorStack, penalty: PenaltyState):
        self.stack = stack
        self.penalty = penalty
        c = stack.cfg
        self.opt = torch.optim.Adam(
            list(stack.preprocessor.parameters()) + list(stack.invariant.parameters()), lr=c.lr, betas=c.adam_betas
        )
        self.mine = [MineTrainer(T, c.lr, c.adam_betas) for T in stack.stat_pair.members]
        self.classifier: DomainClassifier | None = None
        self.classifier_opt = None
        if c.dcl_weight > 0:
            if c.use_expert_penalty or c.use_prior_penalty:
                raise ConfigurationError("domain confusion baseline cannot be combined with MI constraints")
            self.classifier = DomainClassifier(c.latent_dim, c.hidden)
            self.classifier_opt = torch.optim.Adam(self.classifier.parameters(), lr=c.lr, betas=c.adam_betas)

    def _units(self, nats: torch.Tensor | float):
        return nats_to(nats, self.stack.cfg.units)

    def discriminator_step(self, batch_e, batch_pi, batch_pe=None, batch_ppi=None) -> LossBreakdown:
        """One descent step on ``-J_G + L_beta + L_lambda`` (or the DCL variant).

        Penalties depend on the preprocessor output only, so the invariant
        discriminator receives gradient from ``J_G`` alone.
        """
        c = self.stack.cfg
        have_prior = batch_pe is not None and batch_ppi is not None
        if c.use_prior_penalty and not have_prior:
            raise ConfigurationError("prior batches are required when the prior-data penalty is enabled")
        self.stack.train()
        groups = [as_tensor(batch_e), as_tensor(batch_pi)]
        if have_prior:
            groups += [as_tensor(batch_pe), as_tensor(batch_ppi)]
        sizes = [g.shape[0] for g in groups]
        z, _ = self.stack.encode(torch.cat(groups), stochastic=True)
        logits = self.stack.invariant(z.reshape(z.shape[0], -1))
        parts_z = torch.split(z, sizes)
        parts_l = torch.split(logits, sizes)
        negatives = list(parts_l[1:]) if (have_prior and c.prior_negatives) else [parts_l[1]]
        j_g = gail_objective(parts_l[0], torch.cat(negatives))
        out = LossBreakdown(j_g=float(j_g.detach()))
        loss = -j_g
        m = c.latent_dim

        def flat(*zs):
            zz = torch.cat([x.reshape(-1, m) for x in zs])
            lab = _labels(zs[0].numel() // m, sum(x.numel() for x in zs[1:]) // m)
            return zz, lab

        if c.use_expert_penalty:
            zz, lab = flat(parts_z[0], parts_z[1])
            est = double_estimate(self.stack.stat_pair, zz, lab)
            mi = self._units(est.value)
            lb = loss_beta(mi, self.penalty.beta)
            loss = loss + lb
            out.loss_beta, out.mi_expert = float(lb.detach()), float(mi.detach())
            out.extras["winner_expert"] = est.winner
        if c.use_prior_penalty:
            zz, lab = flat(parts_z[2], parts_z[3])
            est = double_estimate(self.stack.stat_pair, zz, lab)
            mi = self._units(est.value)
            ll = loss_lambda(mi, self.penalty.lam, self.penalty.i_max_prior)
            loss = loss + ll
            out.loss_lambda, out.mi_prior = float(ll.detach()), float(mi.detach())
            out.extras["winner_prior"] = est.winner
        if self.classifier is not None:
            pos = [parts_z[0]] + ([parts_z[2]] if have_prior else [])
            neg = [parts_z[1]] + ([parts_z[3]] if have_prior else [])
            with _Frozen(self.classifier):
                j_dcl = dcl_objective(
                    self.classifier, torch.cat(pos).reshape(-1, m), torch.cat(neg).reshape(-1, m)
                )
            loss = loss + c.dcl_weight * j_dcl
            out.j_dcl = float(j_dcl.detach())
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite discriminator loss {float(loss.detach())}")
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        out.loss_d = float(loss.detach())
        with torch.no_grad():
            out.accuracy = 0.5 * float((parts_l[0] > 0).float().mean() + (parts_l[1] <= 0).float().mean())
        return out

    @torch.no_grad()
    def _latents(self, obs) -> torch.Tensor:
        o = as_tensor(obs)
        rep = self.stack.preprocessor(o)
        return sample_latent(rep, torch.randn_like(rep.mean))

    def mi_learning_step(self, sample_obs) -> tuple[float, float | None]:
        """One ascent step per statistics network on fresh batches.

        ``sample_obs()`` returns ``(obs_e, obs_pi, obs_pe, obs_ppi)`` (prior
        entries may be None). Returns the max over networks of the pre-step
        expert-set and prior-set estimates in the configured units.
        """
        est, est_p = [], []
        for trainer in self.mine:
            oe, opi, ope, oppi = sample_obs()
            ze, zpi = self._latents(oe), self._latents(opi)
            z = torch.cat([ze, zpi])
            lab = _labels(len(ze), len(zpi))
            obj_e = dv_objective(trainer.T, z, lab)
            total = obj_e
            if ope is not None and oppi is not None:
                zpe, zppi = self._latents(ope), self._latents(oppi)
                obj_p = dv_objective(trainer.T, torch.cat([zpe, zppi]), _labels(len(zpe), len(zppi)))
                total = total + obj_p
                est_p.append(float(obj_p.detach()))
            trainer.opt.zero_grad()
            (-total).backward()
            trainer.opt.step()
            est.append(float(obj_e.detach()))
        prior = self._units(max(est_p)) if est_p else None
        return self._units(max(est)), prior

    def dcl_step(self, sample_obs) -> float:
        """Classifier ascent on ``J_DCL`` over detached latents; returns its accuracy."""
        oe, opi, ope, oppi = sample_obs()
        pos = [self._latents(oe)] + ([self._latents(ope)] if ope is not None else [])
        neg = [self._latents(opi)] + ([self._latents(oppi)] if oppi is not None else [])
        zp, zn = torch.cat(pos), torch.cat(neg)
        j = dcl_objective(self.classifier, zp, zn)
        self.classifier_opt.zero_grad()
        (-j).backward()
        self.classifier_opt.step()
        with torch.no_grad():
            acc = 0.5 * float((self.classifier(zp) > 0).float().mean() + (self.classifier(zn) <= 0).float().mean())
        return acc
