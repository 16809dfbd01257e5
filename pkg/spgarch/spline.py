"""Quadratic truncated-power spline for the coefficient function g.

g(eps) = b0 + b1*eps + b2*eps**2 + sum_i beta_i * (eps - k_i)_+**2

The persistence E[g(eps)] needs c_i(nu) = E[(eps - k_i)_+**2] under the
standardised t; those constants are computed by adaptive quadrature and kept
in a lookup table over a grid of nu values.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, special

from spgarch.errors import ContractViolation, DomainError, NumericError
from spgarch.innovation import NU_MAX, NU_MIN, StdTDist, std_t_log_density, std_t_quantile

logger = logging.getLogger(__name__)

QUAD_TOL = 1e-10
# Bumped whenever the way table entries are computed changes.
TABLE_FORMAT = 2
TAIL_CUTOFF = 50.0
GRID_SIZE = 400
GRID_NU_MIN = 2.02


@dataclass(frozen=True)
class KnotPool:
    knots: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise DomainError(f"knots must be strictly increasing: {self.knots}")

    @property
    def size(self) -> int:
        return len(self.knots)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.knots, dtype=float)

    def digest(self) -> str:
        return hashlib.sha256(self.as_array().tobytes()).hexdigest()


def default_knot_pool(nu: float = 8.0, count: int = 9) -> KnotPool:
    """Knots at the j/(count+1) quantiles of F_sdt,nu."""
    dist = StdTDist(nu)
    levels = [j / (count + 1) for j in range(1, count + 1)]
    return KnotPool(tuple(std_t_quantile(dist, level) for level in levels))


@dataclass(frozen=True)
class Indicator:
    """Knot selection vector m; m_i = 1 marks an unrestricted knot coefficient."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise DomainError(f"indicator bits must be 0 or 1: {self.bits}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def zeros(cls, size: int) -> Indicator:
        return cls((0,) * size)

    @classmethod
    def from_bitstring(cls, text: str) -> Indicator:
        return cls(tuple(int(ch) for ch in text.strip()))

    @property
    def size(self) -> int:
        return len(self.bits)

    @property
    def count(self) -> int:
        return sum(self.bits)

    @property
    def active(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=bool)

    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class SplineSpec:
    b0: float
    b1: float
    b2: float
    beta: tuple[float, ...] = ()
    pool: KnotPool = field(default_factory=KnotPool)
    indicator: Indicator | None = None

    def __post_init__(self) -> None:
        beta = tuple(float(b) for b in self.beta) or (0.0,) * self.pool.size
        object.__setattr__(self, "beta", beta)
        if len(beta) != self.pool.size:
            raise ContractViolation(f"expected {self.pool.size} knot coefficients, got {len(beta)}")
        indicator = self.indicator
        if indicator is None:
            indicator = Indicator(tuple(int(b != 0.0) for b in beta))
            object.__setattr__(self, "indicator", indicator)
        if indicator.size != self.pool.size:
            raise ContractViolation("indicator length must equal the knot pool size")
        for bit, value in zip(indicator.bits, beta):
            if bit == 0 and value != 0.0:
                raise ContractViolation("inactive knot coefficients must be exactly zero")

    @property
    def beta_array(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=float)


def truncated_power(eps, knot: float, degree: int):
    if degree < 0:
        raise DomainError("degree must be nonnegative")
    eps = np.asarray(eps, dtype=float)
    diff = eps - knot
    value = np.where(diff >= 0.0, np.abs(diff) ** degree, 0.0)
    return float(value) if value.ndim == 0 else value


def eval_g(spec: SplineSpec, eps):
    eps = np.asarray(eps, dtype=float)
    value = spec.b0 + spec.b1 * eps + spec.b2 * eps * eps
    for knot, coef in zip(spec.pool.knots, spec.beta):
        if coef != 0.0:
            value = value + coef * truncated_power(eps, knot, 2)
    return float(value) if np.ndim(value) == 0 else value


def eval_g_batch(coefs: np.ndarray, beta: np.ndarray, knots: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """g on a grid for many draws at once.

    coefs has shape (N, 3) holding (b0, b1, b2), beta has shape (N, K);
    the result has shape (N, len(eps)).
    """
    eps = np.asarray(eps, dtype=float)
    poly = np.vstack([np.ones_like(eps), eps, eps * eps])
    value = coefs @ poly
    if knots.size:
        basis = np.clip(eps[None, :] - knots[:, None], 0.0, None) ** 2
        value = value + beta @ basis
    return value


def compute_c_gaussian(knot: float) -> float:
    k = float(knot)
    return (
        -math.exp(-0.5 * k * k) * k / math.sqrt(2.0 * math.pi)
        + 0.5 * (1.0 + k * k) * special.erfc(k / math.sqrt(2.0))
    )


def _t_upper_moments(nu: float, a: float) -> tuple[float, float, float]:
    """Upper partial moments of an unscaled t_nu: P(X > a), E[X; X > a], E[X^2; X > a]."""

    def survival(df: float, x: float) -> float:
        tail = 0.5 * special.betainc(0.5 * df, 0.5, df / (df + x * x))
        return tail if x > 0 else 1.0 - tail

    log_c_nu = special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu) - 0.5 * math.log(nu * math.pi)
    density = math.exp(log_c_nu - 0.5 * (nu + 1) * math.log1p(a * a / nu))
    s0 = survival(nu, a)
    s1 = density * (nu + a * a) / (nu - 1.0)
    shrink = math.sqrt((nu - 2.0) / nu)
    s2 = nu * (nu - 1.0) / (nu - 2.0) * survival(nu - 2.0, a * shrink) - nu * s0
    return s0, s1, s2


def _tail_c(knot: float, nu: float, lower: float) -> float:
    """Integral of (eps - knot)^2 f_sdt(eps) over [lower, inf), lower >= knot, in closed form."""
    scale = math.sqrt((nu - 2.0) / nu)
    s0, s1, s2 = _t_upper_moments(nu, lower / scale)
    return scale * scale * s2 - 2.0 * knot * scale * s1 + knot * knot * s0


def _quad(func, lower: float, upper: float, tol: float, **context) -> float:
    points = [p for p in (-5.0, 0.0, 5.0) if lower < p < upper] or None
    result = integrate.quad(func, lower, upper, epsabs=1e-15, epsrel=tol, limit=500, points=points, full_output=1)
    value, abserr = result[0], result[1]
    if len(result) > 3 and abserr > 10.0 * tol * max(abs(value), 1e-300):
        raise NumericError(
            "adaptive quadrature did not converge",
            {"lower": lower, "upper": upper, "value": value, "abserr": abserr, "message": result[3], **context},
        )
    return value


def compute_c(knot: float, nu: float, tol: float = QUAD_TOL) -> float:
    """c(k, nu) = integral over [k, inf) of (eps - k)^2 f_sdt,nu(eps)."""
    if tol <= 0:
        raise DomainError("tolerance must be positive")
    if nu > NU_MAX:
        return compute_c_gaussian(knot)
    dist = StdTDist(nu)
    knot = float(knot)

    def integrand(eps: float) -> float:
        return (eps - knot) ** 2 * math.exp(std_t_log_density(dist, eps))

    cuts = [knot] + [c for c in (-TAIL_CUTOFF, TAIL_CUTOFF) if c > knot]
    total = 0.0
    for lower, upper in zip(cuts, cuts[1:]):
        total += _quad(integrand, lower, upper, tol, knot=knot, nu=nu)
    return total + _tail_c(knot, nu, cuts[-1])


def default_nu_grid(size: int = GRID_SIZE, nu_min: float = GRID_NU_MIN, nu_max: float = NU_MAX) -> np.ndarray:
    """Increasing nu values, uniformly spaced in 1/nu."""
    inverse = np.linspace(1.0 / nu_max, 1.0 / nu_min, size)
    return np.sort(1.0 / inverse)


@dataclass(frozen=True)
class CTable:
    pool: KnotPool
    nu_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (self.pool.size, self.nu_grid.size):
            raise ContractViolation("table shape does not match knots x grid")
        # Interpolation runs over increasing 1/nu, i.e. the reversed grid.
        object.__setattr__(self, "_inv_grid", (1.0 / self.nu_grid)[::-1])
        object.__setattr__(self, "_inv_values", self.values[:, ::-1])

    def lookup(self, nu: float) -> np.ndarray:
        return self.lookup_many(np.asarray([nu], dtype=float))[0]

    def lookup_many(self, nus) -> np.ndarray:
        """c values for each nu, shape (len(nus), K); linear in 1/nu inside the grid.

        nu outside [nu_grid[0], nu_grid[-1]] is computed directly with ``compute_c``.
        """
        nus = np.atleast_1d(np.asarray(nus, dtype=float))
        x_grid = self._inv_grid
        x = np.clip(1.0 / nus, x_grid[0], x_grid[-1])
        idx = np.clip(np.searchsorted(x_grid, x, side="right") - 1, 0, x_grid.size - 2)
        weight = (x - x_grid[idx]) / (x_grid[idx + 1] - x_grid[idx])
        left = self._inv_values[:, idx]
        right = self._inv_values[:, idx + 1]
        result = (left * (1.0 - weight) + right * weight).T
        for row in np.flatnonzero((nus < self.nu_grid[0]) | (nus > self.nu_grid[-1])):
            result[row] = [compute_c(knot, float(nus[row])) for knot in self.pool.knots]
        return result


def build_c_table(pool: KnotPool, nu_grid: Sequence[float] | None = None, tol: float = QUAD_TOL) -> CTable:
    grid = default_nu_grid() if nu_grid is None else np.asarray(nu_grid, dtype=float)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise DomainError("nu grid must be strictly increasing with at least two points")
    if grid[0] <= NU_MIN or grid[-1] < NU_MAX:
        raise DomainError(f"nu grid must cover ({NU_MIN}, {NU_MAX}], got [{grid[0]}, {grid[-1]}]")
    logger.info("Building c table: %d knots x %d nu values", pool.size, grid.size)
    values = np.empty((pool.size, grid.size))
    for i, knot in enumerate(pool.knots):
        for j, nu in enumerate(grid):
            values[i, j] = compute_c(knot, nu, tol)
    return CTable(pool=pool, nu_grid=grid, values=values)


def table_cache_key(pool: KnotPool, nu_grid: np.ndarray, tol: float = QUAD_TOL) -> str:
    digest = hashlib.sha256()
    digest.update(pool.as_array().tobytes())
    digest.update(np.asarray(nu_grid, dtype=float).tobytes())
    digest.update(repr(tol).encode())
    digest.update(str(TABLE_FORMAT).encode())
    return digest.hexdigest()[:16]


def save_c_table(table: CTable, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        np.savez(handle, knots=table.pool.as_array(), nu_grid=table.nu_grid, values=table.values)


def load_c_table(path: Path) -> CTable:
    with np.load(path) as data:
        return CTable(pool=KnotPool(tuple(data["knots"])), nu_grid=data["nu_grid"].copy(), values=data["values"].copy())


def load_or_build_c_table(
    pool: KnotPool,
    cache_dir: Path,
    nu_grid: Iterable[float] | None = None,
    tol: float = QUAD_TOL,
) -> CTable:
    grid = default_nu_grid() if nu_grid is None else np.asarray(list(nu_grid), dtype=float)
    path = Path(cache_dir) / f"ctable-{table_cache_key(pool, grid, tol)}.npz"
    if path.exists():
        logger.info("Loading c table from %s", path)
        return load_c_table(path)
    table = build_c_table(pool, grid, tol)
    save_c_table(table, path)
    logger.info("Stored c table at %s", path)
    return table


def persistence(spec: SplineSpec, nu: float, table: CTable | None = None) -> float:
    """E[g(eps)] = b0 + b2 + sum_i beta_i c_i(nu); b1 drops out by symmetry."""
    value = spec.b0 + spec.b2
    if not any(spec.beta):
        return value
    if table is None:
        c_values = np.array([compute_c(k, nu) if b != 0.0 else 0.0 for k, b in zip(spec.pool.knots, spec.beta)])
    else:
        if table.pool != spec.pool:
            raise ContractViolation("c table was built for a different knot pool")
        c_values = table.lookup(nu)
    return float(value + spec.beta_array @ c_values)


@dataclass(frozen=True)
class TableConfig:
    """Knot pool and c-table grid settings."""

    knot_nu: float = 8.0
    n_knots: int = 9
    grid_size: int = GRID_SIZE
    tol: float = QUAD_TOL

    def __post_init__(self) -> None:
        if self.n_knots < 0:
            raise DomainError("n_knots must be nonnegative")
        if self.grid_size < 2:
            raise DomainError("grid_size must be at least 2")
        if not self.tol > 0.0:
            raise DomainError("tol must be positive")

    def pool(self) -> KnotPool:
        return default_knot_pool(self.knot_nu, self.n_knots)

    def nu_grid(self) -> np.ndarray:
        return default_nu_grid(self.grid_size)

    def load_table(self, cache_dir: Path) -> CTable:
        return load_or_build_c_table(self.pool(), cache_dir, self.nu_grid(), self.tol)
