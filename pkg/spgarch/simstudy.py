"""Simulation study: four data generating processes, L_p losses and the replication harness.

Seed splitting: ``SeedSequence(seed).spawn(len(dgps) * n_sim)`` gives one child per
(dgp, replication) in row-major order; each child spawns ``1 + len(models)``
grandchildren, the first for the simulated series and the rest for the model fits
in configured order.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from multiprocessing import Pool
from typing import Optional

import numpy as np
from numpy.random import Generator, SeedSequence

from spgarch.bayes import PriorConfig
from spgarch.errors import ConfigError, ContractViolation, DomainError, SpgarchError
from spgarch.inference import coefficient_band, knot_count_probabilities, posterior_volatility
from spgarch.sampler import MixtureConfig, SamplerConfig, run_parametric_sampler, run_spgarch_sampler
from spgarch.spline import CTable, KnotPool, SplineSpec, eval_g
from spgarch.volmodel import (
    FamilyTag,
    FamilyVector,
    ParametricFamily,
    ParamVector,
    ReturnSeries,
    Theta,
    eval_parametric_g,
    simulate_with_volatility,
    theta_persistence,
)

logger = logging.getLogger(__name__)

DGP_OMEGA = 0.1
DGP_MU = 0.0


class StudyModel(str, Enum):
    spgarch = "spgarch"
    garch = "garch"
    gjr = "gjr"
    nagarch = "nagarch"
    beta_t = "beta_t"
    oracle = "oracle"


@dataclass(frozen=True)
class DgpSpec:
    id: int
    theta: Theta
    persistence: float

    @property
    def nu(self) -> float:
        return self.theta.nu

    def g(self, eps):
        if isinstance(self.theta, FamilyVector):
            return eval_parametric_g(self.theta.family, eps)
        return eval_g(self.theta.spline, eps)


def _dgp_theta(dgp_id: int) -> Theta:
    if dgp_id == 1:
        spline = SplineSpec(1.1, 0.0, 0.0, (-0.48, 0.58), KnotPool((-0.77, -0.473)))
        return ParamVector(8.0, DGP_MU, DGP_OMEGA, spline)
    families = {
        2: ParametricFamily(FamilyTag.garch, (0.85, 0.1), nu=8.0),
        3: ParametricFamily(FamilyTag.beta_t, (0.82, 0.15, 0.0), nu=5.0),
        4: ParametricFamily(FamilyTag.gjr, (0.8, 0.1, 0.15), nu=5.0),
    }
    if dgp_id not in families:
        raise DomainError(f"unknown DGP id {dgp_id}; expected 1-4")
    return FamilyVector(families[dgp_id], DGP_MU, DGP_OMEGA)


def dgp_spec(dgp_id: int) -> DgpSpec:
    theta = _dgp_theta(dgp_id)
    return DgpSpec(dgp_id, theta, theta_persistence(theta))


def simulate_dgp(spec: DgpSpec, T: int, rng: Generator) -> tuple[ReturnSeries, np.ndarray]:
    """Observable returns together with the latent sigma_1..sigma_T."""
    if T < 2:
        raise DomainError("T must be at least 2")
    return simulate_with_volatility(spec.theta, T, rng)


def _lp(errors: np.ndarray, p: float) -> float:
    if p < 1.0:
        raise DomainError("loss order p must be >= 1")
    return float(np.mean(np.abs(errors) ** p) ** (1.0 / p))


def loss_in_sample(est, truth, p: float) -> float:
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ContractViolation(f"length mismatch: {est.shape} vs {truth.shape}")
    return _lp(est - truth, p)


def loss_out_of_sample(forecasts, truths, p: float) -> float:
    """Cross-sectional L_p loss over replications."""
    forecasts = np.asarray(forecasts, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if forecasts.shape != truths.shape:
        raise ContractViolation(f"length mismatch: {forecasts.shape} vs {truths.shape}")
    return _lp(forecasts - truths, p)


PRESETS: dict[str, dict[str, int]] = {
    "desk": {"n_sim": 50, "T": 2000, "n_iter": 110_000, "n_burn": 10_000},
    "full": {"n_sim": 500, "T": 4001, "n_iter": 550_000, "n_burn": 50_000},
}


@dataclass(frozen=True)
class StudyConfig:
    n_sim: int = 50
    T: int = 2000
    dgps: tuple[int, ...] = (1, 2, 3, 4)
    models: tuple[StudyModel, ...] = (StudyModel.spgarch, StudyModel.garch, StudyModel.gjr, StudyModel.beta_t)
    p: tuple[float, ...] = (1.0, 2.0)
    seed: int = 0
    workers: int = 1
    n_iter: int = 110_000
    n_burn: int = 10_000
    band_step: float = 0.05

    def __post_init__(self) -> None:
        object.__setattr__(self, "models", tuple(StudyModel(m) for m in self.models))
        object.__setattr__(self, "dgps", tuple(int(d) for d in self.dgps))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if self.n_sim < 1:
            raise DomainError("n_sim must be at least 1")
        if self.T < 3:
            raise DomainError("T must be at least 3")
        if not self.models or not self.dgps:
            raise DomainError("study needs at least one model and one DGP")
        if any(v < 1.0 for v in self.p):
            raise DomainError("loss orders must be >= 1")
        if self.workers < 1:
            raise DomainError("workers must be at least 1")
        if not 0.0 < self.band_step <= 1.0:
            raise DomainError("band_step must lie in (0, 1]")

    @classmethod
    def preset(cls, name: str, **overrides) -> StudyConfig:
        if name not in PRESETS:
            raise ConfigError(f"unknown study preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    def band_grid(self) -> np.ndarray:
        count = int(round(8.0 / self.band_step)) + 1
        return np.round(np.linspace(-4.0, 4.0, count), 10)


@dataclass(frozen=True)
class ModelOutcome:
    model: StudyModel
    in_sample: dict[float, float]
    forecast: float
    g_mean: np.ndarray
    knot_mode: Optional[int] = None


@dataclass(frozen=True)
class ReplicationResult:
    dgp: int
    replication: int
    truth_T: float
    outcomes: tuple[ModelOutcome, ...] = ()
    error: Optional[str] = None


@dataclass
class StudyReport:
    config: StudyConfig
    in_sample: dict[tuple[int, StudyModel, float], float] = field(default_factory=dict)
    out_of_sample: dict[tuple[int, StudyModel, float], float] = field(default_factory=dict)
    replications: list[ReplicationResult] = field(default_factory=list)
    bands: dict[tuple[int, StudyModel], tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)
    grid: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def dropped(self) -> list[ReplicationResult]:
        return [rep for rep in self.replications if rep.error is not None]

    def completed(self, dgp: int) -> int:
        return sum(1 for rep in self.replications if rep.dgp == dgp and rep.error is None)


@dataclass(frozen=True)
class _ReplicationTask:
    dgp: int
    replication: int
    seed: SeedSequence
    config: StudyConfig
    sampler: SamplerConfig
    prior: PriorConfig
    mixture: MixtureConfig
    table: Optional[CTable]


def _fit_model(
    model: StudyModel,
    r: ReturnSeries,
    truth: np.ndarray,
    spec: DgpSpec,
    task: _ReplicationTask,
    rng: Generator,
    grid: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, Optional[int]]:
    """(sigma_hat_1..sigma_hat_T, posterior-mean g on grid, knot-count mode)."""
    if model is StudyModel.oracle:
        return truth, np.asarray(spec.g(grid), dtype=float), None
    if model is StudyModel.spgarch:
        if task.table is None:
            raise ContractViolation("the spgarch model needs a c table")
        sample = run_spgarch_sampler(r, task.sampler, task.prior, task.table, task.mixture, rng=rng)
        table = task.table
    else:
        sample = run_parametric_sampler(FamilyTag(model.value), r, task.sampler, rng, task.mixture)
        table = None
    sigma_hat = posterior_volatility(sample, r, table)
    g_mean = coefficient_band(sample, grid).mean
    mode = None
    if model is StudyModel.spgarch:
        probs = knot_count_probabilities(sample)
        mode = max(probs, key=lambda k: (probs[k], -k))
    return sigma_hat, g_mean, mode


def _run_replication(task: _ReplicationTask) -> ReplicationResult:
    cfg = task.config
    spec = dgp_spec(task.dgp)
    streams = [np.random.default_rng(s) for s in task.seed.spawn(1 + len(cfg.models))]
    r_full, sigma = simulate_dgp(spec, cfg.T, streams[0])
    r = r_full.head(cfg.T - 1)
    grid = cfg.band_grid()
    outcomes = []
    try:
        for model, rng in zip(cfg.models, streams[1:]):
            sigma_hat, g_mean, mode = _fit_model(model, r, sigma, spec, task, rng, grid)
            est_in, forecast = sigma_hat[: cfg.T - 1], float(sigma_hat[cfg.T - 1])
            losses = {p: loss_in_sample(est_in, sigma[: cfg.T - 1], p) for p in cfg.p}
            outcomes.append(ModelOutcome(model, losses, forecast, g_mean, mode))
    except SpgarchError as exc:
        logger.warning("DGP %d replication %d dropped: %s", task.dgp, task.replication, exc)
        return ReplicationResult(task.dgp, task.replication, float(sigma[-1]), error=str(exc))
    logger.info("DGP %d replication %d done", task.dgp, task.replication)
    return ReplicationResult(task.dgp, task.replication, float(sigma[-1]), tuple(outcomes))


def _aggregate(cfg: StudyConfig, results: list[ReplicationResult]) -> StudyReport:
    report = StudyReport(cfg, replications=results, grid=cfg.band_grid())
    in_losses: dict[tuple[int, StudyModel, float], list[float]] = defaultdict(list)
    forecasts: dict[tuple[int, StudyModel], list[tuple[float, float]]] = defaultdict(list)
    curves: dict[tuple[int, StudyModel], list[np.ndarray]] = defaultdict(list)
    for rep in results:
        if rep.error is not None:
            continue
        for outcome in rep.outcomes:
            for p, value in outcome.in_sample.items():
                in_losses[(rep.dgp, outcome.model, p)].append(value)
            forecasts[(rep.dgp, outcome.model)].append((outcome.forecast, rep.truth_T))
            curves[(rep.dgp, outcome.model)].append(outcome.g_mean)
    for key, values in in_losses.items():
        report.in_sample[key] = math.fsum(values) / len(values)
    for (dgp, model), pairs in forecasts.items():
        est, truth = np.array(pairs).T
        for p in cfg.p:
            report.out_of_sample[(dgp, model, p)] = loss_out_of_sample(est, truth, p)
    for key, stack in curves.items():
        values = np.vstack(stack)
        lower, upper = np.quantile(values, [0.025, 0.975], axis=0)
        report.bands[key] = (values.mean(axis=0), lower, upper)
    return report


def run_study(
    cfg: StudyConfig,
    sampler: SamplerConfig | None = None,
    prior: PriorConfig | None = None,
    mixture: MixtureConfig | None = None,
    table: CTable | None = None,
) -> StudyReport:
    sampler = replace(sampler or SamplerConfig(), n_iter=cfg.n_iter, n_burn=cfg.n_burn)
    prior = prior or PriorConfig(inclusion_prob=(0.5,))
    if StudyModel.spgarch in cfg.models and table is None:
        raise ContractViolation("the spgarch model needs a c table")
    children = SeedSequence(cfg.seed).spawn(len(cfg.dgps) * cfg.n_sim)
    tasks = [
        _ReplicationTask(dgp, rep, children[i * cfg.n_sim + rep], cfg, sampler, prior, mixture or MixtureConfig(), table)
        for i, dgp in enumerate(cfg.dgps)
        for rep in range(cfg.n_sim)
    ]
    logger.info("Running %d replications on %d worker(s)", len(tasks), cfg.workers)
    if cfg.workers == 1:
        results = [_run_replication(task) for task in tasks]
    else:
        with Pool(processes=cfg.workers) as pool:
            results = pool.map(_run_replication, tasks)
    report = _aggregate(cfg, results)
    if report.dropped:
        logger.warning("%d replication(s) dropped", len(report.dropped))
    return report
