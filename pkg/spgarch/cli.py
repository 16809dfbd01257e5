"""Command-line jobs: fit, simulate, forecast, dic, study, print-config, build-table.

Exit codes: 0 success, 2 parse or configuration error, 3 any other failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from spgarch.database import get_session, init_db
from spgarch.drawfile import DrawWriter, read_draws
from spgarch.errors import ConfigError, ParseError, SpgarchError
from spgarch.importers import ingest
from spgarch.inference import (
    coefficient_band,
    dic_averaged,
    dic_direct,
    knot_count_probabilities,
    one_step_forecast,
    parameter_summary,
    posterior_volatility,
    unconditional_moments,
)
from spgarch.models import ReplicationLog, RunLog, RunStatus
from spgarch.reports import (
    render_report,
    write_band_csv,
    write_dic_csv,
    write_forecast_csv,
    write_knots_csv,
    write_simulated_csv,
    write_study_tables,
    write_trace_csv,
)
from spgarch.sampler import PosteriorSample, run_parametric_sampler, run_spgarch_sampler
from spgarch.settings import Settings, dump_settings, get_cache_dir, get_log_level, resolve_settings
from spgarch.simstudy import StudyModel, StudyReport, dgp_spec, run_study, simulate_dgp
from spgarch.spline import CTable, load_or_build_c_table
from spgarch.volmodel import FamilyTag, ReturnSeries

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FAILURE = 3
SPLINE_MODEL = "spgarch"


class Command(str, Enum):
    fit = "fit"
    simulate = "simulate"
    forecast = "forecast"
    dic = "dic"
    study = "study"
    print_config = "print-config"
    build_table = "build-table"


@dataclass(frozen=True)
class JobConfig:
    command: Command
    settings: Settings

    @property
    def out_dir(self) -> Path:
        return Path(self.settings.job.out)

    @property
    def data_path(self) -> Path:
        if not self.settings.job.data:
            raise ConfigError(f"{self.command.value} needs --data")
        return Path(self.settings.job.data)

    @property
    def draws_path(self) -> Path:
        return Path(self.settings.job.draws) if self.settings.job.draws else self.out_dir / "draws.csv"

    @property
    def seed(self) -> int:
        return self.settings.job.seed


@dataclass
class JobResult:
    artifacts: list[Path]
    data_sha256: Optional[str] = None
    study: Optional[StudyReport] = None


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(job: JobConfig, data_sha256: str | None = None) -> Path:
    path = job.out_dir / "manifest.env"
    lines = [f"# command={job.command.value}"]
    if data_sha256:
        lines.append(f"# data_sha256={data_sha256}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n" + dump_settings(job.settings), encoding="utf-8")
    return path


def _model_name(job: JobConfig) -> str:
    model = job.settings.job.model
    if model != SPLINE_MODEL and model not in {tag.value for tag in FamilyTag}:
        raise ConfigError(f"unknown model {model!r}")
    return model


def _table_for(job: JobConfig) -> CTable:
    return job.settings.spline.load_table(get_cache_dir())


def _table_for_sample(job: JobConfig, sample: PosteriorSample) -> CTable | None:
    if sample.family is not None:
        return None
    spline = job.settings.spline
    return load_or_build_c_table(sample.pool, get_cache_dir(), spline.nu_grid(), spline.tol)


def _fit(job: JobConfig) -> JobResult:
    settings = job.settings
    data_path = job.data_path
    r = ingest(data_path, settings.ingest)
    model = _model_name(job)
    out = job.out_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg = settings.sampler_config()
    table = _table_for(job) if model == SPLINE_MODEL else None
    writer = DrawWriter(out / "draws.csv", model, table.pool if table is not None else None)
    with writer:
        if table is not None:
            sample = run_spgarch_sampler(r, cfg, settings.prior, table, settings.mixture, sink=writer)
        else:
            sample = run_parametric_sampler(FamilyTag(model), r, cfg, mix=settings.mixture, sink=writer)
        writer.close(sample.acceptance_rate)

    write_trace_csv(out / "trace.csv", sample)
    write_band_csv(out / "band.csv", coefficient_band(sample))
    dic = dic_averaged(sample, r, table)
    write_dic_csv(out / "dic.csv", dic, dic_direct(sample, r, table))
    knot_probs = knot_count_probabilities(sample)
    write_knots_csv(out / "knots.csv", knot_probs)
    (out / "summary.txt").write_text(_summary_text(job, model, sample, r, table, dic, knot_probs), encoding="utf-8")
    sha = file_sha256(data_path)
    manifest = _write_manifest(job, sha)
    names = ["draws.csv", "trace.csv", "band.csv", "dic.csv", "knots.csv", "summary.txt"]
    return JobResult([out / name for name in names] + [manifest], sha)


def _summary_text(job, model, sample, r, table, dic, knot_probs) -> str:
    sigma, mu = unconditional_moments(sample, table)
    visits = sorted(sample.model_visit_counts.items(), key=lambda item: (-item[1], item[0].bits))
    top_models = [(m.bitstring(), count / len(sample)) for m, count in visits[:5]]
    context = {
        "model": model,
        "T": r.T,
        "draws": len(sample),
        "acceptance": sample.acceptance_rate,
        "seed": job.seed,
        "parameters": parameter_summary(sample, table),
        "uncond_sigma": sigma,
        "uncond_mu": mu,
        "forecast": one_step_forecast(sample, r, table),
        "dic": dic,
        "knot_probs": knot_probs if sample.family is None else {},
        "top_models": top_models,
    }
    return render_report("summary.txt", context)


def _simulate(job: JobConfig) -> JobResult:
    spec = dgp_spec(job.settings.job.dgp)
    r, sigma = simulate_dgp(spec, job.settings.job.T, np.random.default_rng(job.seed))
    path = job.out_dir / "simulated.csv"
    write_simulated_csv(path, r, sigma)
    return JobResult([path, _write_manifest(job)])


def _load_fit(job: JobConfig) -> tuple[PosteriorSample, ReturnSeries, CTable | None, str]:
    sample = read_draws(job.draws_path)
    r = ingest(job.data_path, job.settings.ingest)
    return sample, r, _table_for_sample(job, sample), file_sha256(job.data_path)


def _forecast(job: JobConfig) -> JobResult:
    sample, r, table, sha = _load_fit(job)
    volatility = posterior_volatility(sample, r, table)
    forecast = float(volatility[-1])
    path = job.out_dir / "forecast.csv"
    write_forecast_csv(path, forecast, volatility)
    print(f"one-step volatility forecast: {forecast:.4f}")
    return JobResult([path], sha)


def _dic(job: JobConfig) -> JobResult:
    sample, r, table, sha = _load_fit(job)
    path = job.out_dir / "dic.csv"
    report = dic_averaged(sample, r, table)
    write_dic_csv(path, report, dic_direct(sample, r, table))
    print(f"DIC_ave={report.dic_ave:.4f} Dbar_ave={report.dbar_ave:.4f} pD_ave={report.pd_ave:.4f}")
    return JobResult([path], sha)


def _study(job: JobConfig) -> JobResult:
    settings = job.settings
    cfg = settings.study_config()
    table = _table_for(job) if StudyModel.spgarch in cfg.models else None
    report = run_study(cfg, settings.sampler, settings.prior, settings.mixture, table)
    written = write_study_tables(job.out_dir, report)
    return JobResult(written + [_write_manifest(job)], study=report)


def _print_config(job: JobConfig) -> JobResult:
    sys.stdout.write(dump_settings(job.settings))
    return JobResult([])


def _build_table(job: JobConfig) -> JobResult:
    table = _table_for(job)
    print(f"c table ready: {table.pool.size} knots x {table.nu_grid.size} nu values in {get_cache_dir()}")
    return JobResult([])


HANDLERS: dict[Command, Callable[[JobConfig], JobResult]] = {
    Command.fit: _fit,
    Command.simulate: _simulate,
    Command.forecast: _forecast,
    Command.dic: _dic,
    Command.study: _study,
    Command.print_config: _print_config,
    Command.build_table: _build_table,
}

def _record_run(job: JobConfig, exit_code: int, message: str | None, data_sha256: str | None) -> int:
    init_db()
    with get_session() as session:
        entry = RunLog(
            command=job.command.value,
            model=job.settings.job.model,
            seed=job.seed,
            out_dir=str(job.out_dir),
            data_sha256=data_sha256,
            status=RunStatus.ok if exit_code == EXIT_OK else RunStatus.failed,
            exit_code=exit_code,
            message=message,
        )
        session.add(entry)
        session.commit()
        session.refresh(entry)
        return entry.id


def _record_replications(report: StudyReport, run_id: int) -> None:
    init_db()
    with get_session() as session:
        for rep in report.replications:
            if rep.error is not None:
                session.add(
                    ReplicationLog(
                        run_id=run_id, dgp=rep.dgp, replication=rep.replication, truth=rep.truth_T, failed=True, message=rep.error
                    )
                )
                continue
            for outcome in rep.outcomes:
                session.add(
                    ReplicationLog(
                        run_id=run_id,
                        dgp=rep.dgp,
                        replication=rep.replication,
                        model=outcome.model.value,
                        loss_in_p1=outcome.in_sample.get(1.0),
                        loss_in_p2=outcome.in_sample.get(2.0),
                        forecast=outcome.forecast,
                        truth=rep.truth_T,
                        knot_mode=outcome.knot_mode,
                    )
                )
        session.commit()


def run_job(job: JobConfig) -> int:
    """Run one job; errors become exit codes and a failed RunLog row."""
    message = None
    result = JobResult([])
    try:
        result = HANDLERS[job.command](job)
        exit_code = EXIT_OK
        for path in result.artifacts:
            logger.info("Wrote %s", path)
    except (ParseError, ConfigError) as exc:
        logger.error("%s failed: %s", job.command.value, exc)
        message, exit_code = str(exc), EXIT_INPUT
    except SpgarchError as exc:
        logger.error("%s failed: %s", job.command.value, exc)
        message, exit_code = str(exc), EXIT_FAILURE
    except Exception as exc:
        logger.exception("%s failed unexpectedly", job.command.value)
        message, exit_code = f"{type(exc).__name__}: {exc}", EXIT_FAILURE
    if job.command is not Command.print_config:
        run_id = _record_run(job, exit_code, message, result.data_sha256)
        if result.study is not None:
            _record_replications(result.study, run_id)
    return exit_code


def _flag_keys(command: Command) -> dict[str, str]:
    keys = {
        "data": "JOB__DATA",
        "model": "JOB__MODEL",
        "out": "JOB__OUT",
        "seed": "JOB__SEED",
        "dgp": "JOB__DGP",
        "T": "JOB__T",
        "draws": "JOB__DRAWS",
        "preset": "JOB__PRESET",
        "n_iter": "SAMPLER__N_ITER",
        "n_burn": "SAMPLER__N_BURN",
        "n_sim": "STUDY__N_SIM",
        "workers": "STUDY__WORKERS",
        "models": "STUDY__MODELS",
        "kind": "INGEST__KIND",
        "column": "INGEST__COLUMN",
        "delimiter": "INGEST__DELIMITER",
    }
    if command is Command.study:
        keys.update({"n_iter": "STUDY__N_ITER", "n_burn": "STUDY__N_BURN", "T": "STUDY__T"})
    return keys


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Config file with SECTION__FIELD=value lines")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE", help="Override one key")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--seed", help="Master seed")


def parse_args(argv: Iterable[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Spline GARCH estimation, forecasting and simulation study")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser(Command.fit.value, help="Fit a model to a return series")
    _add_common(fit)
    fit.add_argument("--data", help="Delimited input file")
    fit.add_argument("--model", help="spgarch, garch, gjr, nagarch or beta_t")
    fit.add_argument("--n-iter", dest="n_iter")
    fit.add_argument("--n-burn", dest="n_burn")
    fit.add_argument("--kind", help="returns or prices")
    fit.add_argument("--column")
    fit.add_argument("--delimiter")

    simulate = sub.add_parser(Command.simulate.value, help="Simulate one of the four data generating processes")
    _add_common(simulate)
    simulate.add_argument("--dgp")
    simulate.add_argument("--T", dest="T")

    for name, text in ((Command.forecast, "One-step volatility forecast from a draw file"), (Command.dic, "DIC from a draw file")):
        cmd = sub.add_parser(name.value, help=text)
        _add_common(cmd)
        cmd.add_argument("--data", help="The series the draws were fitted to")
        cmd.add_argument("--draws", help="Draw file (default <out>/draws.csv)")
        cmd.add_argument("--kind")
        cmd.add_argument("--column")
        cmd.add_argument("--delimiter")

    study = sub.add_parser(Command.study.value, help="Run the simulation study")
    _add_common(study)
    study.add_argument("--preset", help="desk or full")
    study.add_argument("--n-sim", dest="n_sim")
    study.add_argument("--T", dest="T")
    study.add_argument("--n-iter", dest="n_iter")
    study.add_argument("--n-burn", dest="n_burn")
    study.add_argument("--workers")
    study.add_argument("--models", help="Comma-separated model list")

    for name, text in ((Command.print_config, "Print the resolved configuration"), (Command.build_table, "Build or load the c table")):
        _add_common(sub.add_parser(name.value, help=text))
    return parser.parse_args(argv)


def job_from_args(args: argparse.Namespace) -> JobConfig:
    command = Command(args.command)
    flags = {"JOB__COMMAND": command.value}
    for attr, key in _flag_keys(command).items():
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = str(value)
    settings = resolve_settings(args.config, flags, args.set)
    return JobConfig(command, settings)


def main(argv: Iterable[str] | None = None) -> int:
    logging.basicConfig(level=get_log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = parse_args(argv)
    try:
        job = job_from_args(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_INPUT
    return run_job(job)
