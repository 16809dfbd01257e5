"""Columnar draw files.

Layout: ``#``-prefixed metadata lines (``# key=value``), a CSV header
``iteration,m,<parameter columns>,loglik`` and one row per retained draw.
Floats are written with 17 significant digits so a re-read is exact. A final
``# acceptance=`` line is appended when the writer closes.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from pathlib import Path
from typing import Optional, TextIO

import numpy as np

from spgarch.errors import ParseError
from spgarch.sampler import PosteriorSample
from spgarch.spline import Indicator, KnotPool
from spgarch.volmodel import PARAM_NAMES, FamilyTag

logger = logging.getLogger(__name__)

SPLINE_MODEL = "spgarch"


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def _columns(model: str, pool: KnotPool) -> list[str]:
    if model == SPLINE_MODEL:
        return ["nu", "mu", "omega", "b0", "b1", "b2", *(f"beta{i + 1}" for i in range(pool.size))]
    return ["nu", "mu", "omega", *PARAM_NAMES[FamilyTag(model)]]


class DrawWriter:
    """Streams draws to disk; usable directly as the sampler's sink."""

    def __init__(self, path: Path, model: str, pool: KnotPool | None = None) -> None:
        self.path = Path(path)
        self.model = model
        self.pool = pool or KnotPool()
        self.rows = 0
        self._handle: Optional[TextIO] = None
        self._writer = None

    def __enter__(self) -> DrawWriter:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w", encoding="utf-8", newline="")
        self._handle.write("# spgarch draws\n")
        self._handle.write(f"# model={self.model}\n")
        self._handle.write(f"# knots={','.join(fmt(k) for k in self.pool.knots)}\n")
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(["iteration", "m", *_columns(self.model, self.pool), "loglik"])
        return self

    def __call__(self, iteration: int, m: Indicator, row: np.ndarray, loglik: float) -> None:
        self._writer.writerow([iteration, m.bitstring(), *(fmt(v) for v in row), fmt(loglik)])
        self.rows += 1

    def close(self, acceptance_rate: float | None = None) -> None:
        if self._handle is None:
            return
        if acceptance_rate is not None:
            self._handle.write(f"# acceptance={fmt(acceptance_rate)}\n")
        self._handle.close()
        self._handle = None
        logger.info("Wrote %d draws to %s", self.rows, self.path)

    def __exit__(self, *exc_info) -> None:
        self.close()


def write_draws(path: Path, sample: PosteriorSample) -> None:
    model = sample.family.value if sample.family is not None else SPLINE_MODEL
    writer = DrawWriter(path, model, sample.pool)
    with writer:
        iterations = sample.iterations if sample.iterations is not None else np.arange(1, len(sample) + 1)
        for i in range(len(sample)):
            writer(int(iterations[i]), sample.indicator(i), sample.thetas[i], sample.log_likelihood[i])
        writer.close(sample.acceptance_rate)


def read_draws(path: Path) -> PosteriorSample:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"draw file not found: {path}")
    meta: dict[str, str] = {}
    body = []
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
            else:
                body.append(line)
    model = meta.get("model")
    if model is None:
        raise ParseError(f"{path} has no model line")
    knots = meta.get("knots", "")
    pool = KnotPool(tuple(float(k) for k in knots.split(",") if k))
    columns = _columns(model, pool)
    reader = csv.DictReader(io.StringIO("".join(body)))
    iterations, bits, rows, logliks = [], [], [], []
    for row_number, row in enumerate(reader, start=1):
        try:
            iterations.append(int(row["iteration"]))
            bits.append(Indicator.from_bitstring(row["m"] or "").bits)
            rows.append([float(row[name]) for name in columns])
            logliks.append(float(row["loglik"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed draw row ({exc})", row_number) from exc
    if not rows:
        raise ParseError(f"{path} holds no draws")
    return PosteriorSample(
        thetas=np.asarray(rows, dtype=float),
        indicators=np.asarray(bits, dtype=np.int8).reshape(len(rows), pool.size),
        log_likelihood=np.asarray(logliks, dtype=float),
        acceptance_rate=float(meta.get("acceptance", math.nan)),
        pool=pool,
        family=None if model == SPLINE_MODEL else FamilyTag(model),
        iterations=np.asarray(iterations),
    )
