"""Standardised Student-t innovations (zero mean, unit variance)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator
from scipy import optimize, special

from spgarch.errors import DomainError

NU_MIN = 2.0
NU_MAX = 200.0


@dataclass(frozen=True)
class StdTDist:
    """F_sdt,nu: a Student-t with nu degrees of freedom rescaled by sqrt((nu - 2) / nu).

    Any real nu > 2 is accepted here; the (2, 200] cap belongs to the
    restricted parameter space and is enforced by ``volmodel.in_theta``.
    """

    nu: float

    def __post_init__(self) -> None:
        if not self.nu > NU_MIN or not math.isfinite(self.nu):
            raise DomainError(f"degrees of freedom must be finite and > 2, got {self.nu}")

    @property
    def scale(self) -> float:
        return math.sqrt((self.nu - 2.0) / self.nu)

    @property
    def log_norm(self) -> float:
        nu = self.nu
        return (
            special.gammaln(0.5 * (nu + 1.0))
            - special.gammaln(0.5 * nu)
            - 0.5 * math.log(math.pi * (nu - 2.0))
        )


def std_t_log_density(dist: StdTDist, z):
    z = np.asarray(z, dtype=float)
    nu = dist.nu
    value = dist.log_norm - 0.5 * (nu + 1.0) * np.log1p(z * z / (nu - 2.0))
    return float(value) if value.ndim == 0 else value


def std_t_sample(dist: StdTDist, rng: Generator, size=None):
    return rng.standard_t(dist.nu, size=size) * dist.scale


def std_t_cdf(dist: StdTDist, z: float) -> float:
    # Regularised incomplete beta form of the t CDF on the unscaled variable.
    x = z / dist.scale
    nu = dist.nu
    tail = 0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + x * x))
    return float(1.0 - tail) if x > 0 else float(tail)


def std_t_quantile(dist: StdTDist, level: float) -> float:
    if not 0.0 < level < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {level}")
    if level == 0.5:
        return 0.0
    if level < 0.5:
        return -std_t_quantile(dist, 1.0 - level)

    upper = 1.0
    while std_t_cdf(dist, upper) < level:
        upper *= 2.0
    return optimize.brentq(
        lambda z: std_t_cdf(dist, z) - level,
        0.0,
        upper,
        xtol=1e-14,
        rtol=4.0 * np.finfo(float).eps,
        maxiter=500,
    )


def obs_log_density(dist: StdTDist, r, mu: float, sigma2):
    """Log density of r under a t with mean mu and variance sigma2."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0.0):
        raise DomainError("conditional variance must be positive")
    z = (np.asarray(r, dtype=float) - mu) / np.sqrt(sigma2)
    value = std_t_log_density(dist, z) - 0.5 * np.log(sigma2)
    return float(value) if np.ndim(value) == 0 else value
