"""Adaptive (beta) and dual (lambda) penalties on estimated mutual information."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError

BETA_MIN, BETA_MAX = 1e-4, 1e4
BETA_FACTOR = 1.5


@dataclass
class PenaltyState:
    beta: float = 1.0
    lam: float = 0.0
    i_max_expert: float = 0.99
    i_max_prior: float = 0.001
    dual_step: float = 0.01
    running_mi_expert: float = 0.0
    running_mi_prior: float = 0.0
    beta_min: float = BETA_MIN
    beta_max: float = BETA_MAX

    def __post_init__(self):
        if not 0 < self.beta_min <= self.beta_max:
            raise ContractError("need 0 < beta_min <= beta_max")
        if self.beta <= 0:
            raise ContractError("beta must be positive")
        if self.lam < 0:
            raise ContractError("lambda must be non-negative")
        if self.dual_step <= 0:
            raise ContractError("dual step must be positive")

    def end_episode(self, mean_mi_expert: float | None, mean_mi_prior: float | None) -> None:
        """Apply the once-per-episode scheduler updates; negative estimates count as 0."""
        if mean_mi_expert is not None:
            self.running_mi_expert = max(0.0, mean_mi_expert)
            self.beta = update_beta(self.beta, self.running_mi_expert, self.i_max_expert, self.beta_min, self.beta_max)
        if mean_mi_prior is not None:
            self.running_mi_prior = max(0.0, mean_mi_prior)
            self.lam = update_lambda(self.lam, self.running_mi_prior, self.i_max_prior, self.dual_step)


def loss_beta(mi_estimate, beta: float):
    return beta * mi_estimate


def update_beta(beta: float, mean_mi: float, i_max: float, lo: float = BETA_MIN, hi: float = BETA_MAX) -> float:
    if beta <= 0:
        raise ContractError("beta must be positive")
    if mean_mi > i_max:
        beta = beta * BETA_FACTOR
    elif mean_mi < i_max / 2.0:
        beta = beta / BETA_FACTOR
    return min(max(beta, lo), hi)


def loss_lambda(mi_estimate, lam: float, i_max: float):
    return lam * (mi_estimate - i_max)


def update_lambda(lam: float, mean_mi: float, i_max: float, step: float) -> float:
    if lam < 0 or step <= 0:
        raise ContractError("need lambda >= 0 and step > 0")
    return max(0.0, lam + step * (mean_mi - i_max))
