"""Post-processing of a PosteriorSample: model-averaged estimates and DIC."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from spgarch.errors import ContractViolation, DomainError
from spgarch.spline import CTable, Indicator, eval_g_batch
from spgarch.volmodel import NEG_INF, FamilyTag, ReturnSeries, Theta, filter_volatility, log_likelihood
from spgarch.sampler import PosteriorSample

logger = logging.getLogger(__name__)

LOW_COUNT = 10
_CHUNK_CELLS = 20_000_000


@dataclass(frozen=True)
class FunctionBand:
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95


@dataclass(frozen=True)
class ModelDic:
    probability: float
    dic: float
    dbar: float
    pd: float
    visits: int
    flag: Optional[str] = None


@dataclass(frozen=True)
class DicReport:
    dic_ave: float
    dbar_ave: float
    pd_ave: float
    per_model: dict[Indicator, ModelDic] = field(default_factory=dict)
    excluded_probability: float = 0.0


def default_grid() -> np.ndarray:
    return np.round(np.linspace(-4.0, 4.0, 801), 10)


def _require_draws(sample: PosteriorSample) -> None:
    if len(sample) == 0:
        raise ContractViolation("posterior sample is empty")


def bma_estimate(sample: PosteriorSample, eta: Callable[[Theta, Indicator], float]) -> float:
    """(1/N) sum_i eta(theta_i, m_i)."""
    _require_draws(sample)
    total = math.fsum(eta(sample.theta(i), sample.indicator(i)) for i in range(len(sample)))
    return total / len(sample)


def _family_g_batch(tag: FamilyTag, thetas: np.ndarray, eps: np.ndarray) -> np.ndarray:
    nu = thetas[:, [0]]
    p = thetas[:, 3:]
    eps = eps[None, :]
    negative = (eps < 0.0).astype(float)
    if tag is FamilyTag.garch:
        return p[:, [0]] + p[:, [1]] * eps**2
    if tag is FamilyTag.gjr:
        return p[:, [0]] + (p[:, [1]] + p[:, [2]] * negative) * eps**2
    if tag is FamilyTag.nagarch:
        return p[:, [0]] + p[:, [1]] * (eps - p[:, [2]]) ** 2
    u = (nu + 1.0) * eps**2 / (nu - 2.0 + eps**2)
    return p[:, [0]] + (p[:, [1]] + p[:, [2]] * negative) * u


def draw_g_values(sample: PosteriorSample, eps) -> np.ndarray:
    """g evaluated for every draw on the points eps; shape (N, len(eps))."""
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if sample.family is not None:
        return _family_g_batch(sample.family, sample.thetas, eps)
    return eval_g_batch(sample.thetas[:, 3:6], sample.thetas[:, 6:], sample.pool.as_array(), eps)


def coefficient_band(sample: PosteriorSample, grid=None, level: float = 0.95) -> FunctionBand:
    if not 0.0 < level < 1.0:
        raise DomainError("credible level must lie in (0, 1)")
    _require_draws(sample)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    mean = np.empty(grid.size)
    lower = np.empty(grid.size)
    upper = np.empty(grid.size)
    step = max(1, _CHUNK_CELLS // len(sample))
    for start in range(0, grid.size, step):
        values = draw_g_values(sample, grid[start : start + step])
        block = slice(start, start + values.shape[1])
        mean[block] = values.mean(axis=0)
        lower[block], upper[block] = np.quantile(values, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    return FunctionBand(grid, mean, lower, upper, level)


def persistence_draws(sample: PosteriorSample, table: CTable | None) -> np.ndarray:
    thetas = sample.thetas
    if sample.family is not None:
        p = thetas[:, 3:]
        if sample.family is FamilyTag.garch:
            return p[:, 0] + p[:, 1]
        if sample.family is FamilyTag.nagarch:
            return p[:, 0] + p[:, 1] * (1.0 + p[:, 2] ** 2)
        return p[:, 0] + p[:, 1] + 0.5 * p[:, 2]
    level = thetas[:, 3] + thetas[:, 5]
    if sample.pool.size == 0:
        return level
    if table is None or table.pool != sample.pool:
        raise ContractViolation("a c table for the sample's knot pool is required")
    return level + np.einsum("ij,ij->i", thetas[:, 6:], table.lookup_many(thetas[:, 0]))


def unconditional_moments(sample: PosteriorSample, table: CTable | None = None) -> tuple[float, float]:
    """Posterior means of sqrt(omega / (1 - persistence)) and of mu."""
    _require_draws(sample)
    level = persistence_draws(sample, table)
    sigma = np.sqrt(sample.thetas[:, 2] / (1.0 - level))
    return float(sigma.mean()), float(sample.thetas[:, 1].mean())


def parameter_summary(sample: PosteriorSample, table: CTable | None = None, level: float = 0.95) -> dict[str, tuple[float, float, float]]:
    """Posterior mean and equal-tailed interval for nu, mu, omega and the persistence."""
    _require_draws(sample)
    columns = {
        "nu": sample.thetas[:, 0],
        "mu": sample.thetas[:, 1],
        "omega": sample.thetas[:, 2],
        "persistence": persistence_draws(sample, table),
    }
    tails = [(1.0 - level) / 2.0, (1.0 + level) / 2.0]
    summary = {}
    for name, values in columns.items():
        low, high = np.quantile(values, tails)
        summary[name] = (float(values.mean()), float(low), float(high))
    return summary


def _model_groups(sample: PosteriorSample) -> dict[Indicator, np.ndarray]:
    if sample.indicators.shape[1] == 0:
        return {Indicator(()): np.arange(len(sample))}
    keys, inverse = np.unique(sample.indicators, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    return {Indicator(tuple(key)): np.flatnonzero(inverse == j) for j, key in enumerate(keys)}


def _mean_deviance(sample: PosteriorSample, m: Indicator, rows: np.ndarray, r: ReturnSeries, table: CTable | None) -> float:
    theta_bar = sample.thetas[rows].mean(axis=0)
    loglik = log_likelihood(sample.theta_from_row(theta_bar, m), r, table)
    return NEG_INF if loglik == NEG_INF else -2.0 * loglik


def _dic_groups(sample, r, table):
    _require_draws(sample)
    deviance = -2.0 * sample.log_likelihood
    n = len(sample)
    groups = []
    for m, rows in _model_groups(sample).items():
        d_theta_bar = _mean_deviance(sample, m, rows, r, table)
        groups.append((m, rows, float(deviance[rows].mean()), d_theta_bar, rows.size / n))
    return deviance, groups


def dic_averaged(sample: PosteriorSample, r: ReturnSeries, table: CTable | None = None) -> DicReport:
    """Model-averaged DIC from per-configuration DICs weighted by N_tau / N."""
    _, groups = _dic_groups(sample, r, table)
    per_model: dict[Indicator, ModelDic] = {}
    included = []
    for m, rows, dbar, d_theta_bar, prob in groups:
        if d_theta_bar == NEG_INF:
            logger.warning("Posterior mean of model %s lies outside the parameter space; excluded from DIC", m.bitstring())
            per_model[m] = ModelDic(prob, math.nan, dbar, math.nan, rows.size, "outside-theta")
            continue
        pd = dbar - d_theta_bar
        flag = "low-count" if rows.size < LOW_COUNT else None
        per_model[m] = ModelDic(prob, dbar + pd, dbar, pd, rows.size, flag)
        included.append((prob, dbar, pd))
    if not included:
        raise ContractViolation("no visited model has a posterior mean inside the parameter space")
    rare = sum(1 for entry in per_model.values() if entry.flag == "low-count")
    if rare:
        logger.warning("%d model(s) visited fewer than %d times; their DIC is noisy", rare, LOW_COUNT)
    kept = sum(prob for prob, _, _ in included)
    dbar_ave = math.fsum(prob * dbar for prob, dbar, _ in included) / kept
    pd_ave = math.fsum(prob * pd for prob, _, pd in included) / kept
    return DicReport(dbar_ave + pd_ave, dbar_ave, pd_ave, per_model, 1.0 - kept)


def dic_direct(sample: PosteriorSample, r: ReturnSeries, table: CTable | None = None) -> tuple[float, float, float]:
    """(DIC_ave, Dbar_ave, pD_ave) from one pass over the draws.

    Dbar_ave is the plain mean deviance; pD_ave subtracts the visit-weighted
    deviance at each configuration's posterior mean. Draws of configurations
    whose mean falls outside the parameter space are left out, as in ``dic_averaged``.
    """
    _require_draws(sample)
    sums: dict[tuple[int, ...], np.ndarray] = {}
    counts: dict[tuple[int, ...], int] = {}
    keys = [tuple(row) for row in sample.indicators.tolist()]
    for key, row in zip(keys, sample.thetas):
        sums[key] = sums.get(key, 0.0) + row
        counts[key] = counts.get(key, 0) + 1
    plug_in = {}
    for key, total in sums.items():
        m = Indicator(key)
        loglik = log_likelihood(sample.theta_from_row(total / counts[key], m), r, table)
        if loglik != NEG_INF:
            plug_in[key] = -2.0 * loglik
    if not plug_in:
        raise ContractViolation("no visited model has a posterior mean inside the parameter space")
    mask = np.array([key in plug_in for key in keys])
    n_kept = int(mask.sum())
    dbar = float(np.mean(-2.0 * sample.log_likelihood[mask]))
    pd = dbar - math.fsum(counts[key] * value for key, value in plug_in.items()) / n_kept
    return dbar + pd, dbar, pd


def knot_count_probabilities(sample: PosteriorSample) -> dict[int, float]:
    _require_draws(sample)
    counts = np.bincount(sample.indicators.sum(axis=1).astype(int), minlength=sample.indicators.shape[1] + 1)
    return {k: float(c) / len(sample) for k, c in enumerate(counts)}


def indicator_to_decimal(m: Indicator) -> int:
    """m read as a binary number with m_1 as the most significant bit."""
    value = 0
    for bit in m.bits:
        value = (value << 1) | bit
    return value


def decimal_to_indicator(value: int, size: int) -> Indicator:
    if not 0 <= value < 2**size:
        raise DomainError(f"{value} does not fit in {size} bits")
    return Indicator(tuple((value >> (size - 1 - i)) & 1 for i in range(size)))


def posterior_volatility(sample: PosteriorSample, r: ReturnSeries, table: CTable | None = None) -> np.ndarray:
    """Posterior mean of sigma_t for t = 1..T+1.

    Runs of identical consecutive draws (rejections) are filtered once and weighted.
    """
    _require_draws(sample)
    thetas = sample.thetas
    changed = np.any(thetas[1:] != thetas[:-1], axis=1) | np.any(sample.indicators[1:] != sample.indicators[:-1], axis=1)
    starts = np.concatenate([[0], np.flatnonzero(changed) + 1])
    weights = np.diff(np.concatenate([starts, [len(sample)]]))
    total = np.zeros(r.T + 1)
    for start, weight in zip(starts, weights):
        path = filter_volatility(sample.theta(int(start)), r, table)
        total += weight * np.sqrt(path.sigma2)
    return total / len(sample)


def one_step_forecast(sample: PosteriorSample, r: ReturnSeries, table: CTable | None = None) -> float:
    return float(posterior_volatility(sample, r, table)[-1])
