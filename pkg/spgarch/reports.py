from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from spgarch.drawfile import fmt
from spgarch.inference import DicReport, FunctionBand, indicator_to_decimal
from spgarch.sampler import PosteriorSample
from spgarch.simstudy import StudyReport
from spgarch.volmodel import ReturnSeries

logger = logging.getLogger(__name__)

BASE_DIR = Path(__file__).resolve().parent.parent
TEMPLATE_DIR = BASE_DIR / "templates"
REPORT_TEMPLATE_DIR = TEMPLATE_DIR / "reports"

_env = Environment(
    loader=FileSystemLoader(str(REPORT_TEMPLATE_DIR)),
    keep_trailing_newline=True,
    undefined=StrictUndefined,
)


def render_report(filename: str, context: dict[str, Any]) -> str:
    return _env.get_template(filename).render(**context)


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return fmt(value)
    return str(value)


def write_band_csv(path: Path, band: FunctionBand) -> None:
    rows = zip(band.grid, band.mean, band.lower, band.upper)
    _write_rows(path, ["eps", "mean", "lower", "upper"], ([fmt(v) for v in row] for row in rows))


def write_dic_csv(path: Path, report: DicReport, direct: tuple[float, float, float] | None = None) -> None:
    rows = []
    for m, entry in sorted(report.per_model.items(), key=lambda item: -item[1].visits):
        rows.append(
            [m.bitstring() or "-", indicator_to_decimal(m), fmt(entry.probability), entry.visits,
             fmt(entry.dbar), fmt(entry.pd), fmt(entry.dic), entry.flag or ""]
        )
    rows.append(["average", "", fmt(1.0 - report.excluded_probability), "",
                 fmt(report.dbar_ave), fmt(report.pd_ave), fmt(report.dic_ave), ""])
    if direct is not None:
        dic, dbar, pd = direct
        rows.append(["average_direct", "", "", "", fmt(dbar), fmt(pd), fmt(dic), ""])
    _write_rows(path, ["model", "decimal", "probability", "visits", "dbar", "pd", "dic", "flag"], rows)


def write_knots_csv(path: Path, probabilities: dict[int, float]) -> None:
    _write_rows(path, ["knots", "probability"], ([k, fmt(p)] for k, p in sorted(probabilities.items())))


def write_trace_csv(path: Path, sample: PosteriorSample) -> None:
    """Model-space trace: iteration, decimal-coded indicator, knot count, log-likelihood."""
    iterations = sample.iterations if sample.iterations is not None else np.arange(1, len(sample) + 1)
    counts = sample.indicators.sum(axis=1)
    rows = (
        [int(iterations[i]), indicator_to_decimal(sample.indicator(i)), int(counts[i]), fmt(sample.log_likelihood[i])]
        for i in range(len(sample))
    )
    _write_rows(path, ["iteration", "model", "knots", "loglik"], rows)


def write_simulated_csv(path: Path, r: ReturnSeries, sigma: np.ndarray) -> None:
    rows = ([t + 1, fmt(value), fmt(vol)] for t, (value, vol) in enumerate(zip(r.values, sigma)))
    _write_rows(path, ["t", "r", "sigma"], rows)


def write_forecast_csv(path: Path, forecast: float, volatility: np.ndarray) -> None:
    rows = [[t + 1, fmt(v)] for t, v in enumerate(volatility)]
    _write_rows(path, ["t", "sigma"], rows)
    logger.info("One-step volatility forecast %.4f written to %s", forecast, path)


def _loss_table(report: StudyReport, losses: dict) -> tuple[list[str], list[list[str]]]:
    cfg = report.config
    header = ["model"] + [f"dgp{d}_L{p:g}" for d in cfg.dgps for p in cfg.p]
    rows = []
    for model in cfg.models:
        row = [model.value]
        for d in cfg.dgps:
            for p in cfg.p:
                row.append(_cell(losses.get((d, model, p))))
        rows.append(row)
    return header, rows


def write_study_tables(out_dir: Path, report: StudyReport) -> list[Path]:
    out_dir = Path(out_dir)
    cfg = report.config
    written = []
    for name, losses in (("study_in.csv", report.in_sample), ("study_out.csv", report.out_of_sample)):
        header, rows = _loss_table(report, losses)
        _write_rows(out_dir / name, header, rows)
        written.append(out_dir / name)

    raw_header = ["dgp", "replication", "model", *(f"L{p:g}_in" for p in cfg.p), "forecast", "truth", "knot_mode", "error"]
    raw_rows = []
    for rep in sorted(report.replications, key=lambda item: (item.dgp, item.replication)):
        if rep.error is not None:
            raw_rows.append([rep.dgp, rep.replication, "", *("" for _ in cfg.p), "", fmt(rep.truth_T), "", rep.error])
            continue
        for outcome in rep.outcomes:
            raw_rows.append(
                [rep.dgp, rep.replication, outcome.model.value, *(fmt(outcome.in_sample[p]) for p in cfg.p),
                 fmt(outcome.forecast), fmt(rep.truth_T), _cell(outcome.knot_mode), ""]
            )
    _write_rows(out_dir / "study_raw.csv", raw_header, raw_rows)
    written.append(out_dir / "study_raw.csv")

    band_rows = []
    for (dgp, model), (mean, lower, upper) in sorted(report.bands.items(), key=lambda item: (item[0][0], item[0][1].value)):
        for eps, values in zip(report.grid, zip(mean, lower, upper)):
            band_rows.append([dgp, model.value, fmt(eps), *(fmt(v) for v in values)])
    _write_rows(out_dir / "study_bands.csv", ["dgp", "model", "eps", "mean", "lower", "upper"], band_rows)
    written.append(out_dir / "study_bands.csv")
    return written
