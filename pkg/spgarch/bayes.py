"""Spike-and-slab prior and the unnormalised joint posterior over (theta, m).

Point masses at inactive knot coefficients are never evaluated: a submodel
only carries its active coordinates, so the spike terms cancel in every
Metropolis-Hastings ratio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from spgarch.errors import ContractViolation, DomainError
from spgarch.spline import CTable, Indicator
from spgarch.volmodel import NEG_INF, FamilyVector, ParamVector, ReturnSeries, Theta, log_likelihood

__all__ = ["Indicator", "PriorConfig", "log_prior", "log_posterior", "family_log_prior"]


@dataclass(frozen=True)
class PriorConfig:
    sigma2_beta: float = 2500.0
    inclusion_prob: tuple[float, ...] = (0.5,)

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.inclusion_prob)
        object.__setattr__(self, "inclusion_prob", probs)
        if not self.sigma2_beta > 0.0:
            raise DomainError("sigma2_beta must be positive")
        if not probs or any(not 0.0 < p < 1.0 for p in probs):
            raise DomainError("inclusion probabilities must lie in (0, 1)")

    def probabilities(self, size: int) -> np.ndarray:
        """Per-knot inclusion probabilities; a single value is broadcast to every knot."""
        if len(self.inclusion_prob) == 1:
            return np.full(size, self.inclusion_prob[0])
        if len(self.inclusion_prob) != size:
            raise ContractViolation(f"expected {size} inclusion probabilities, got {len(self.inclusion_prob)}")
        return np.asarray(self.inclusion_prob)


def _nu_log_prior(nu: float) -> float:
    # p(nu) proportional to nu^-2, i.e. flat on 1/nu.
    return -2.0 * math.log(nu) if nu > 0.0 else NEG_INF


def log_prior(theta: ParamVector, m: Indicator, cfg: PriorConfig) -> float:
    spline = theta.spline
    if spline.indicator != m:
        raise ContractViolation("parameter vector is inconsistent with the knot indicator")
    active = m.active
    beta = spline.beta_array[active]
    slab = -0.5 * (math.log(2.0 * math.pi * cfg.sigma2_beta) * beta.size + float(beta @ beta) / cfg.sigma2_beta)
    probs = cfg.probabilities(m.size)
    model = float(np.sum(np.where(active, np.log(probs), np.log1p(-probs))))
    return _nu_log_prior(theta.nu) + slab + model


def family_log_prior(theta: FamilyVector) -> float:
    """Parametric baselines: flat except for the nu^-2 factor."""
    return _nu_log_prior(theta.nu)


def log_posterior(
    theta: Theta,
    m: Indicator | None,
    r: ReturnSeries,
    cfg: PriorConfig | None,
    table: CTable | None,
) -> float:
    loglik = log_likelihood(theta, r, table)
    if loglik == NEG_INF:
        return NEG_INF
    if isinstance(theta, FamilyVector):
        return loglik + family_log_prior(theta)
    return loglik + log_prior(theta, m, cfg)
