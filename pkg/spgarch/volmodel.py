"""Conditional-variance recursion, likelihood and the restricted parameter space.

sigma2_t = omega + g(eps_{t-1}) * sigma2_{t-1},  eps_t = (r_t - mu) / sigma_t

Two parameterisations share one numba kernel: the spline form (``ParamVector``)
and the parametric families (``FamilyVector``). GARCH, GJR and NAGARCH run
through their exact spline mapping; Beta-t has its own branch in the kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from numba import njit
from numpy.random import Generator

from spgarch.errors import ContractViolation, DomainError
from spgarch.innovation import NU_MAX, NU_MIN, StdTDist, std_t_sample
from spgarch.spline import CTable, Indicator, KnotPool, SplineSpec, persistence

NEG_INF = -math.inf

_KIND_SPLINE = 0
_KIND_BETA_T = 1


@dataclass(frozen=True)
class ReturnSeries:
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise DomainError("a return series needs at least two observations")
        if not np.all(np.isfinite(values)):
            raise DomainError("return series contains non-finite values")
        object.__setattr__(self, "values", values)
        # Divisor T, raw returns (not de-meaned by the model's mu).
        object.__setattr__(self, "_variance", float(np.var(values)))

    @property
    def T(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.T

    def sample_variance(self) -> float:
        return self._variance

    def head(self, length: int) -> ReturnSeries:
        return ReturnSeries(self.values[:length])


@dataclass(frozen=True)
class ParamVector:
    nu: float
    mu: float
    omega: float
    spline: SplineSpec

    @property
    def indicator(self) -> Indicator:
        return self.spline.indicator

    def full_vector(self) -> np.ndarray:
        s = self.spline
        return np.concatenate([[self.nu, self.mu, self.omega, s.b0, s.b1, s.b2], s.beta_array])

    def active_vector(self) -> np.ndarray:
        s = self.spline
        return np.concatenate([[self.nu, self.mu, self.omega, s.b0, s.b1, s.b2], s.beta_array[s.indicator.active]])

    @classmethod
    def from_full(cls, vector, pool: KnotPool, indicator: Indicator | None = None) -> ParamVector:
        vector = np.asarray(vector, dtype=float)
        spline = SplineSpec(vector[3], vector[4], vector[5], tuple(vector[6:]), pool, indicator)
        return cls(float(vector[0]), float(vector[1]), float(vector[2]), spline)

    @classmethod
    def from_active(cls, vector, indicator: Indicator, pool: KnotPool) -> ParamVector:
        vector = np.asarray(vector, dtype=float)
        if vector.size != 6 + indicator.count:
            raise ContractViolation(f"expected {6 + indicator.count} active coordinates, got {vector.size}")
        beta = np.zeros(pool.size)
        beta[indicator.active] = vector[6:]
        return cls.from_full(np.concatenate([vector[:6], beta]), pool, indicator)


class FamilyTag(str, Enum):
    garch = "garch"
    gjr = "gjr"
    nagarch = "nagarch"
    beta_t = "beta_t"


PARAM_NAMES: dict[FamilyTag, tuple[str, ...]] = {
    FamilyTag.garch: ("beta", "alpha"),
    FamilyTag.gjr: ("beta", "alpha1", "alpha2"),
    FamilyTag.nagarch: ("beta", "alpha", "c"),
    FamilyTag.beta_t: ("beta", "alpha1", "alpha2"),
}


@dataclass(frozen=True)
class ParametricFamily:
    """A parametric coefficient function; nu is the innovation df (Beta-t uses it inside g)."""

    tag: FamilyTag
    params: tuple[float, ...]
    nu: float = 8.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tag", FamilyTag(self.tag))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        expected = len(PARAM_NAMES[self.tag])
        if len(self.params) != expected:
            raise ContractViolation(f"{self.tag.value} takes {expected} parameters, got {len(self.params)}")

    def param(self, name: str) -> float:
        return self.params[PARAM_NAMES[self.tag].index(name)]


@dataclass(frozen=True)
class FamilyVector:
    family: ParametricFamily
    mu: float
    omega: float

    @property
    def nu(self) -> float:
        return self.family.nu

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.nu, self.mu, self.omega], self.family.params])

    @classmethod
    def from_vector(cls, tag: FamilyTag, vector) -> FamilyVector:
        vector = np.asarray(vector, dtype=float)
        family = ParametricFamily(tag, tuple(vector[3:]), nu=float(vector[0]))
        return cls(family, float(vector[1]), float(vector[2]))


Theta = Union[ParamVector, FamilyVector]


@dataclass(frozen=True)
class VolatilityPath:
    """sigma2_1 .. sigma2_{T+1}; ``positive`` is False when the recursion left (0, inf)."""

    sigma2: np.ndarray
    positive: bool

    @property
    def forecast(self) -> float:
        return float(self.sigma2[-1])


def parametric_to_spline(family: ParametricFamily) -> SplineSpec | None:
    tag = family.tag
    if tag is FamilyTag.garch:
        beta, alpha = family.params
        return SplineSpec(beta, 0.0, alpha)
    if tag is FamilyTag.gjr:
        beta, alpha1, alpha2 = family.params
        pool = KnotPool((0.0,))
        return SplineSpec(beta, 0.0, alpha1 + alpha2, (-alpha2,), pool, Indicator((int(alpha2 != 0.0),)))
    if tag is FamilyTag.nagarch:
        beta, alpha, c = family.params
        return SplineSpec(beta + alpha * c * c, -2.0 * alpha * c, alpha)
    return None


def _beta_t_u(eps, nu: float):
    eps2 = np.asarray(eps, dtype=float) ** 2
    return (nu + 1.0) * eps2 / (nu - 2.0 + eps2)


def eval_parametric_g(family: ParametricFamily, eps):
    eps = np.asarray(eps, dtype=float)
    p = family.params
    negative = (eps < 0.0).astype(float)
    if family.tag is FamilyTag.garch:
        value = p[0] + p[1] * eps**2
    elif family.tag is FamilyTag.gjr:
        value = p[0] + (p[1] + p[2] * negative) * eps**2
    elif family.tag is FamilyTag.nagarch:
        value = p[0] + p[1] * (eps - p[2]) ** 2
    else:
        if not family.nu > NU_MIN:
            raise DomainError("Beta-t coefficient function needs nu > 2")
        value = p[0] + (p[1] + p[2] * negative) * _beta_t_u(eps, family.nu)
    return float(value) if value.ndim == 0 else value


def family_persistence(family: ParametricFamily) -> float:
    p = family.params
    if family.tag is FamilyTag.garch:
        return p[0] + p[1]
    if family.tag is FamilyTag.nagarch:
        return p[0] + p[1] * (1.0 + p[2] ** 2)
    # E[eps^2 I(eps<0)] = 1/2 and, for Beta-t, E[u] = 1 under F_sdt,nu.
    return p[0] + p[1] + 0.5 * p[2]


def theta_persistence(theta: Theta, table: CTable | None = None) -> float:
    if isinstance(theta, FamilyVector):
        return family_persistence(theta.family)
    return persistence(theta.spline, theta.nu, table)


def _kernel_inputs(theta: Theta) -> tuple[int, np.ndarray, np.ndarray]:
    if isinstance(theta, FamilyVector):
        spline = parametric_to_spline(theta.family)
        if spline is None:
            return _KIND_BETA_T, np.asarray(theta.family.params, dtype=float), np.empty(0)
    else:
        spline = theta.spline
    coefs = np.concatenate([[spline.b0, spline.b1, spline.b2], spline.beta_array])
    return _KIND_SPLINE, coefs, spline.pool.as_array()


@njit(cache=True)
def _g_value(kind, coefs, knots, nu, eps):
    if kind == 0:
        value = coefs[0] + coefs[1] * eps + coefs[2] * eps * eps
        for i in range(knots.shape[0]):
            diff = eps - knots[i]
            if diff >= 0.0 and coefs[3 + i] != 0.0:
                value += coefs[3 + i] * diff * diff
        return value
    eps2 = eps * eps
    u = (nu + 1.0) * eps2 / (nu - 2.0 + eps2)
    scale = coefs[1] + coefs[2] if eps < 0.0 else coefs[1]
    return coefs[0] + scale * u


@njit(cache=True)
def _variance_recursion(r, mu, omega, sigma2_1, kind, coefs, knots, nu, out):
    out[0] = sigma2_1
    if not sigma2_1 > 0.0:
        return False
    for t in range(1, r.shape[0] + 1):
        prev = out[t - 1]
        eps = (r[t - 1] - mu) / math.sqrt(prev)
        value = omega + _g_value(kind, coefs, knots, nu, eps) * prev
        out[t] = value
        if not value > 0.0:
            for s in range(t + 1, out.shape[0]):
                out[s] = np.nan
            return False
    return True


@njit(cache=True)
def _simulate_recursion(eps, mu, omega, sigma2_1, kind, coefs, knots, nu, r_out, sigma2_out):
    sigma2_out[0] = sigma2_1
    for t in range(eps.shape[0]):
        r_out[t] = mu + math.sqrt(sigma2_out[t]) * eps[t]
        if t + 1 < sigma2_out.shape[0]:
            sigma2_out[t + 1] = omega + _g_value(kind, coefs, knots, nu, eps[t]) * sigma2_out[t]


@njit(cache=True)
def _t_log_likelihood(r, mu, sigma2, nu):
    const = math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu) - 0.5 * math.log(math.pi * (nu - 2.0))
    total = 0.0
    for t in range(r.shape[0]):
        z2 = (r[t] - mu) ** 2 / sigma2[t]
        total += const - 0.5 * (nu + 1.0) * math.log1p(z2 / (nu - 2.0)) - 0.5 * math.log(sigma2[t])
    return total


def filter_volatility(
    theta: Theta,
    r: ReturnSeries,
    table: CTable | None = None,
    sigma2_1: float | None = None,
) -> VolatilityPath:
    """Run the recursion over r; sigma2_1 defaults to the sample variance of r."""
    start = r.sample_variance() if sigma2_1 is None else float(sigma2_1)
    if not start > 0.0:
        raise DomainError("initial conditional variance is not positive (constant return series?)")
    kind, coefs, knots = _kernel_inputs(theta)
    out = np.empty(r.T + 1)
    positive = _variance_recursion(r.values, theta.mu, theta.omega, start, kind, coefs, knots, theta.nu, out)
    return VolatilityPath(out, bool(positive))


def _in_space(theta: Theta, table: CTable | None) -> bool:
    if not NU_MIN < theta.nu <= NU_MAX:
        return False
    if not theta.omega > 0.0:
        return False
    return 0.0 < theta_persistence(theta, table) < 1.0


def in_theta(theta: Theta, r: ReturnSeries, table: CTable | None = None) -> bool:
    try:
        inside = _in_space(theta, table)
    except ContractViolation:
        # A table for another knot pool cannot certify stationarity.
        return False
    if not inside:
        return False
    return filter_volatility(theta, r, table).positive


def evaluate(theta: Theta, r: ReturnSeries, table: CTable | None = None) -> tuple[float, VolatilityPath | None]:
    """Log-likelihood together with the volatility path it was computed from."""
    if not _in_space(theta, table):
        return NEG_INF, None
    path = filter_volatility(theta, r, table)
    if not path.positive:
        return NEG_INF, path
    return float(_t_log_likelihood(r.values, theta.mu, path.sigma2[:-1], theta.nu)), path


def log_likelihood(theta: Theta, r: ReturnSeries, table: CTable | None = None) -> float:
    return evaluate(theta, r, table)[0]


def simulate_with_volatility(
    theta: Theta,
    T: int,
    rng: Generator,
    table: CTable | None = None,
) -> tuple[ReturnSeries, np.ndarray]:
    """Simulate T returns started at the unconditional variance; also returns sigma_1..sigma_T."""
    level = theta_persistence(theta, table)
    if level >= 1.0:
        raise DomainError(f"persistence {level:.6f} >= 1: no stationary starting variance")
    eps = np.ascontiguousarray(std_t_sample(StdTDist(theta.nu), rng, size=int(T)), dtype=float)
    kind, coefs, knots = _kernel_inputs(theta)
    r_out = np.empty(int(T))
    sigma2 = np.empty(int(T))
    _simulate_recursion(eps, theta.mu, theta.omega, theta.omega / (1.0 - level), kind, coefs, knots, theta.nu, r_out, sigma2)
    return ReturnSeries(r_out), np.sqrt(sigma2)


def simulate_path(theta: Theta, T: int, rng: Generator, table: CTable | None = None) -> ReturnSeries:
    return simulate_with_volatility(theta, T, rng, table)[0]
