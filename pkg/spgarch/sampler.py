"""Trans-model adaptive MCMC over (theta, m).

Each iteration flips indicator bits at random, draws theta from a Gaussian
mixture centred on the cached pilot moments of the proposed configuration,
and accepts with the independence-sampler ratio. A configuration's pilot
random-walk chain runs once, on its first visit.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np
from numpy.random import Generator
from scipy import linalg
from scipy.special import logsumexp

from spgarch.bayes import PriorConfig, family_log_prior, log_prior
from spgarch.errors import ContractViolation, DomainError, NumericError, SamplerInitError
from spgarch.spline import CTable, Indicator, KnotPool
from spgarch.volmodel import (
    NEG_INF,
    PARAM_NAMES,
    FamilyTag,
    FamilyVector,
    ParametricFamily,
    ParamVector,
    ReturnSeries,
    Theta,
    evaluate,
)

logger = logging.getLogger(__name__)

COV_JITTER = 1e-8
MAX_CONDITION = 1e12
LOG_SCALE_STEP = 0.01

DrawSink = Callable[[int, Indicator, np.ndarray, float], None]


@dataclass(frozen=True)
class MixtureConfig:
    weights: tuple[float, ...] = (0.85, 0.1, 0.05)
    scales: tuple[float, ...] = (1.0, 10.0, 100.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if len(self.weights) != len(self.scales) or not self.weights:
            raise DomainError("mixture weights and scales must have the same nonzero length")
        if any(w <= 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise DomainError("mixture weights must be positive and sum to 1")
        if any(s <= 0 for s in self.scales):
            raise DomainError("mixture scales must be positive")

    @property
    def n_mix(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 550_000
    n_burn: int = 50_000
    flip_prob: float = 0.1
    pilot_iter: int = 20_000
    pilot_burn: int = 5_000
    pilot_target_accept: float = 0.234
    pilot_adapt_every: int = 100
    pilot_search_iter: int = 200
    seed: int = 0
    debug_check_every: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.n_burn < self.n_iter:
            raise DomainError("n_burn must be smaller than n_iter")
        if not 0.0 < self.flip_prob < 1.0:
            raise DomainError("flip_prob must lie in (0, 1)")
        if not 0 <= self.pilot_burn < self.pilot_iter:
            raise DomainError("pilot_burn must be smaller than pilot_iter")
        if not 0.0 < self.pilot_target_accept < 1.0:
            raise DomainError("pilot_target_accept must lie in (0, 1)")


@dataclass(frozen=True)
class ProposalCacheEntry:
    indicator: Indicator
    mean: np.ndarray
    base_cov: np.ndarray
    chol: np.ndarray
    log_det: float
    pilot_accept: float = math.nan

    @property
    def dim(self) -> int:
        return int(self.mean.size)


@dataclass
class ChainState:
    theta: np.ndarray
    m: Indicator
    log_post: float
    log_lik: float
    log_q: Optional[float] = None


@dataclass
class PosteriorSample:
    """Retained draws; ``thetas`` holds full-width rows with inactive knot coefficients at 0."""

    thetas: np.ndarray
    indicators: np.ndarray
    log_likelihood: np.ndarray
    acceptance_rate: float
    pool: KnotPool = field(default_factory=KnotPool)
    family: Optional[FamilyTag] = None
    iterations: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.thetas.shape[0])

    def indicator(self, i: int) -> Indicator:
        return Indicator(tuple(self.indicators[i]))

    def theta(self, i: int) -> Theta:
        return self.theta_from_row(self.thetas[i], self.indicator(i))

    def theta_from_row(self, row: np.ndarray, m: Indicator) -> Theta:
        if self.family is not None:
            return FamilyVector.from_vector(self.family, row)
        return ParamVector.from_full(row, self.pool, m)

    @property
    def model_visit_counts(self) -> dict[Indicator, int]:
        counts = Counter(tuple(row) for row in self.indicators.tolist())
        return {Indicator(bits): n for bits, n in sorted(counts.items())}

    def column_names(self) -> list[str]:
        if self.family is not None:
            return ["nu", "mu", "omega", *PARAM_NAMES[self.family]]
        return ["nu", "mu", "omega", "b0", "b1", "b2", *(f"beta{i + 1}" for i in range(self.pool.size))]


class SubmodelTarget(Protocol):
    """A posterior over (theta_m, m) as seen by the sampler."""

    n_knots: int

    def evaluate(self, x: np.ndarray, m: Indicator) -> tuple[float, float]:
        """(log posterior, log likelihood) at the active coordinates x."""

    def initial_point(self, m: Indicator) -> np.ndarray:
        ...

    def embed(self, x: np.ndarray, m: Indicator) -> np.ndarray:
        """Full-width row for storage."""


class SpGarchTarget:
    def __init__(self, r: ReturnSeries, prior: PriorConfig, table: CTable) -> None:
        self.r = r
        self.prior = prior
        self.table = table
        self.pool = table.pool
        self.n_knots = table.pool.size

    def theta(self, x: np.ndarray, m: Indicator) -> ParamVector:
        return ParamVector.from_active(x, m, self.pool)

    def evaluate(self, x: np.ndarray, m: Indicator) -> tuple[float, float]:
        theta = self.theta(x, m)
        loglik, _ = evaluate(theta, self.r, self.table)
        if loglik == NEG_INF:
            return NEG_INF, NEG_INF
        return loglik + log_prior(theta, m, self.prior), loglik

    def initial_point(self, m: Indicator) -> np.ndarray:
        var = self.r.sample_variance()
        base = [8.0, float(np.mean(self.r.values)), 0.05 * var, 0.9, 0.0, 0.05]
        return np.concatenate([base, np.zeros(m.count)])

    def embed(self, x: np.ndarray, m: Indicator) -> np.ndarray:
        row = np.zeros(6 + self.n_knots)
        row[:6] = x[:6]
        row[6:][m.active] = x[6:]
        return row


_FAMILY_START: dict[FamilyTag, tuple[float, ...]] = {
    FamilyTag.garch: (0.9, 0.05),
    FamilyTag.gjr: (0.9, 0.03, 0.04),
    FamilyTag.nagarch: (0.9, 0.05, 0.0),
    FamilyTag.beta_t: (0.9, 0.05, 0.0),
}


class FamilyTarget:
    n_knots = 0

    def __init__(self, family: ParametricFamily | FamilyTag, r: ReturnSeries) -> None:
        if isinstance(family, ParametricFamily):
            self.tag = family.tag
            self.start = family.params
        else:
            self.tag = FamilyTag(family)
            self.start = _FAMILY_START[self.tag]
        self.r = r

    def evaluate(self, x: np.ndarray, m: Indicator) -> tuple[float, float]:
        theta = FamilyVector.from_vector(self.tag, x)
        loglik, _ = evaluate(theta, self.r)
        if loglik == NEG_INF:
            return NEG_INF, NEG_INF
        return loglik + family_log_prior(theta), loglik

    def initial_point(self, m: Indicator) -> np.ndarray:
        var = self.r.sample_variance()
        return np.array([8.0, float(np.mean(self.r.values)), 0.05 * var, *self.start])

    def embed(self, x: np.ndarray, m: Indicator) -> np.ndarray:
        return np.array(x, dtype=float)


def propose_indicator(m: Indicator, pi: float, rng: Generator) -> Indicator:
    if not 0.0 <= pi <= 1.0:
        raise DomainError("flip probability must lie in [0, 1]")
    flips = rng.random(m.size) < pi
    return Indicator(tuple(int(b) ^ int(f) for b, f in zip(m.bits, flips)))


def indicator_log_proposal(m_star: Indicator, m: Indicator, pi: float) -> float:
    """log q(m* | m) for independent bit flips with probability pi."""
    flips = sum(a != b for a, b in zip(m_star.bits, m.bits))
    stays = m.size - flips
    return flips * math.log(pi) + stays * math.log1p(-pi)


def indicator_proposal_symmetric(size: int, pi: float) -> bool:
    """Exhaustively confirm q(m* | m) = q(m | m*) over all pairs of length-size indicators."""
    configs = [Indicator(tuple((code >> (size - 1 - i)) & 1 for i in range(size))) for code in range(2**size)]
    return all(
        indicator_log_proposal(a, b, pi) == indicator_log_proposal(b, a, pi) for a in configs for b in configs
    )


def _finalize_entry(m: Indicator, mean: np.ndarray, cov: np.ndarray, pilot_accept: float = math.nan) -> ProposalCacheEntry:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    cov = cov + COV_JITTER * float(np.mean(np.diag(cov))) * np.eye(cov.shape[0])
    condition = float(np.linalg.cond(cov))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise NumericError("pilot covariance is ill-conditioned", {"indicator": m.bitstring(), "condition": condition})
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericError("pilot covariance is not positive definite", {"indicator": m.bitstring()}) from exc
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return ProposalCacheEntry(m, np.asarray(mean, dtype=float), cov, chol, log_det, pilot_accept)


def _random_search(log_target: Callable[[np.ndarray], float], x0: np.ndarray, n_iter: int, rng: Generator):
    best = np.asarray(x0, dtype=float)
    best_value = log_target(best)
    step = 0.05 * np.abs(best) + 0.005
    for _ in range(n_iter):
        candidate = best + step * rng.standard_normal(best.size)
        value = log_target(candidate)
        if value > best_value:
            best, best_value = candidate, value
    return best, best_value


def adaptive_rwm(
    log_target: Callable[[np.ndarray], float],
    x0: np.ndarray,
    n_iter: int,
    n_burn: int,
    rng: Generator,
    target_accept: float = 0.234,
    adapt_every: int = 100,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Random walk Metropolis with a covariance learned from the chain history.

    The proposal is N(x, s * 2.38^2 / d * C); C is refreshed every ``adapt_every``
    iterations and log s moves by 0.01 * (accepted - target_accept) each step.
    Returns the post-burn-in mean, covariance and acceptance rate.
    """
    x = np.asarray(x0, dtype=float).copy()
    d = x.size
    current = log_target(x)
    if current == NEG_INF:
        raise SamplerInitError("pilot chain starts outside the support", {"start": x.tolist()})
    cov = np.diag((0.05 * np.abs(x) + 0.005) ** 2)
    chol = linalg.cholesky(cov, lower=True)
    base_scale = 2.38**2 / d
    log_scale = math.log(0.1)
    history = np.empty((n_iter, d))
    accepted = 0
    accepted_kept = 0
    for i in range(n_iter):
        proposal = x + math.sqrt(base_scale * math.exp(log_scale)) * (chol @ rng.standard_normal(d))
        value = log_target(proposal)
        move = value > NEG_INF and math.log(rng.random()) < value - current
        if move:
            x, current = proposal, value
            accepted += 1
            accepted_kept += i >= n_burn
        log_scale += LOG_SCALE_STEP * (float(move) - target_accept)
        history[i] = x
        if (i + 1) % adapt_every == 0 and accepted > d:
            empirical = np.atleast_2d(np.cov(history[: i + 1], rowvar=False))
            empirical += COV_JITTER * (float(np.mean(np.diag(empirical))) + 1e-12) * np.eye(d)
            try:
                chol = linalg.cholesky(empirical, lower=True)
            except linalg.LinAlgError:
                pass
    if accepted == 0:
        raise SamplerInitError("pilot chain never moved", {"iterations": n_iter, "start": np.asarray(x0).tolist()})
    kept = history[n_burn:]
    return kept.mean(axis=0), np.atleast_2d(np.cov(kept, rowvar=False)), accepted_kept / kept.shape[0]


def pilot_rwm(m: Indicator, target: SubmodelTarget, cfg: SamplerConfig, rng: Generator) -> ProposalCacheEntry:
    """Fit the proposal moments for configuration m from an adaptive pilot chain."""

    def log_target(x: np.ndarray) -> float:
        return target.evaluate(x, m)[0]

    start, start_value = _random_search(log_target, target.initial_point(m), cfg.pilot_search_iter, rng)
    if start_value == NEG_INF:
        raise SamplerInitError("no admissible starting point found", {"indicator": m.bitstring()})
    mean, cov, rate = adaptive_rwm(
        log_target, start, cfg.pilot_iter, cfg.pilot_burn, rng, cfg.pilot_target_accept, cfg.pilot_adapt_every
    )
    logger.info("Pilot chain for m=%s finished: acceptance %.3f", m.bitstring() or "-", rate)
    return _finalize_entry(m, mean, cov, rate)


def propose_theta(entry: ProposalCacheEntry, mix: MixtureConfig, m_star: Indicator, rng: Generator) -> np.ndarray:
    """Active coordinates drawn from sum_j w_j N(mean, scale_j * base_cov)."""
    if entry.indicator != m_star:
        raise ContractViolation("cache entry does not belong to the proposed configuration")
    j = rng.choice(mix.n_mix, p=mix.weights)
    return entry.mean + math.sqrt(mix.scales[j]) * (entry.chol @ rng.standard_normal(entry.dim))


def mixture_log_density(x: np.ndarray, entry: ProposalCacheEntry, mix: MixtureConfig) -> float:
    x = np.asarray(x, dtype=float)
    if x.size != entry.dim:
        raise ContractViolation("parameter dimension does not match the cache entry")
    solved = linalg.solve_triangular(entry.chol, x - entry.mean, lower=True)
    maha = float(solved @ solved)
    d = entry.dim
    scales = np.asarray(mix.scales)
    components = (
        np.log(mix.weights)
        - 0.5 * (d * math.log(2.0 * math.pi) + entry.log_det + d * np.log(scales) + maha / scales)
    )
    return float(logsumexp(components))


def acceptance_log_prob(
    current: ChainState,
    proposal: ChainState,
    cache: dict[Indicator, ProposalCacheEntry],
    mix: MixtureConfig,
) -> float:
    for state in (current, proposal):
        if state.m not in cache:
            raise ContractViolation(f"no proposal cache entry for m={state.m.bitstring()}")
        if state.log_q is None:
            state.log_q = mixture_log_density(state.theta, cache[state.m], mix)
    if proposal.log_post == NEG_INF:
        return NEG_INF
    ratio = proposal.log_post + current.log_q - current.log_post - proposal.log_q
    return min(0.0, ratio)


def run_trans_model(
    target: SubmodelTarget,
    cfg: SamplerConfig,
    mix: MixtureConfig,
    rng: Generator,
    sink: DrawSink | None = None,
) -> tuple[PosteriorSample, dict[Indicator, ProposalCacheEntry]]:
    cache: dict[Indicator, ProposalCacheEntry] = {}
    unavailable: set[Indicator] = set()

    def entry_for(m: Indicator) -> ProposalCacheEntry:
        if m not in cache:
            cache[m] = pilot_rwm(m, target, cfg, rng)
            logger.info("Proposal cache now holds %d configurations", len(cache))
        return cache[m]

    def available_entry(m: Indicator) -> ProposalCacheEntry | None:
        # A configuration whose pilot fails mid-chain is never entered; moves there count as rejections.
        if m in unavailable:
            return None
        try:
            return entry_for(m)
        except NumericError as exc:
            unavailable.add(m)
            logger.warning("Configuration m=%s is unavailable: %s", m.bitstring() or "-", exc)
            return None

    m = Indicator.zeros(target.n_knots)
    x = entry_for(m).mean
    log_post, log_lik = target.evaluate(x, m)
    attempts = 0
    while log_post == NEG_INF:
        if attempts >= cfg.pilot_search_iter:
            raise SamplerInitError(
                "no initial state inside the parameter space", {"indicator": m.bitstring(), "attempts": attempts}
            )
        x = propose_theta(cache[m], mix, m, rng)
        log_post, log_lik = target.evaluate(x, m)
        attempts += 1
    state = ChainState(x, m, log_post, log_lik)

    kept = cfg.n_iter - cfg.n_burn
    width = target.embed(x, m).size
    thetas = np.empty((kept, width))
    indicators = np.empty((kept, target.n_knots), dtype=np.int8)
    logliks = np.empty(kept)
    accepted = 0
    for it in range(cfg.n_iter):
        m_star = propose_indicator(state.m, cfg.flip_prob, rng) if target.n_knots else state.m
        entry = available_entry(m_star)
        if entry is not None:
            x_star = propose_theta(entry, mix, m_star, rng)
            lp_star, ll_star = target.evaluate(x_star, m_star)
            proposal = ChainState(x_star, m_star, lp_star, ll_star)
            if math.log(rng.random()) < acceptance_log_prob(state, proposal, cache, mix):
                state = proposal
                accepted += 1
        if cfg.debug_check_every and (it + 1) % cfg.debug_check_every == 0:
            fresh = target.evaluate(state.theta, state.m)[0]
            if abs(fresh - state.log_post) > 1e-10:
                raise ContractViolation(f"cached log posterior drifted at iteration {it + 1}")
        if it >= cfg.n_burn:
            row = target.embed(state.theta, state.m)
            slot = it - cfg.n_burn
            thetas[slot] = row
            indicators[slot] = state.m.bits
            logliks[slot] = state.log_lik
            if sink is not None:
                sink(it + 1, state.m, row, state.log_lik)
    rate = accepted / cfg.n_iter
    logger.info("Sampler finished: %d iterations, acceptance %.3f, %d configurations", cfg.n_iter, rate, len(cache))
    if unavailable:
        logger.warning("%d proposed configuration(s) were unavailable during the run", len(unavailable))
    sample = PosteriorSample(
        thetas=thetas,
        indicators=indicators,
        log_likelihood=logliks,
        acceptance_rate=rate,
        iterations=np.arange(cfg.n_burn + 1, cfg.n_iter + 1),
    )
    return sample, cache


def run_spgarch_sampler(
    r: ReturnSeries,
    cfg: SamplerConfig,
    prior: PriorConfig,
    table: CTable,
    mix: MixtureConfig | None = None,
    sink: DrawSink | None = None,
    rng: Generator | None = None,
) -> PosteriorSample:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    sample, _ = run_trans_model(SpGarchTarget(r, prior, table), cfg, mix or MixtureConfig(), rng, sink)
    sample.pool = table.pool
    return sample


def run_parametric_sampler(
    family: ParametricFamily | FamilyTag,
    r: ReturnSeries,
    cfg: SamplerConfig,
    rng: Generator | None = None,
    mix: MixtureConfig | None = None,
    sink: DrawSink | None = None,
) -> PosteriorSample:
    target = FamilyTarget(family, r)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    sample, _ = run_trans_model(target, cfg, mix or MixtureConfig(), rng, sink)
    sample.family = target.tag
    return sample
