from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from spgarch.errors import DomainError, ParseError
from spgarch.volmodel import ReturnSeries

logger = logging.getLogger(__name__)


class InputKind(str, Enum):
    returns = "returns"
    prices = "prices"


@dataclass(frozen=True)
class IngestSpec:
    """How to read a delimited file; ``scale100`` only applies to prices."""

    kind: InputKind = InputKind.returns
    column: str = "r"
    delimiter: str = ","
    scale100: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", InputKind(self.kind))
        if not self.column:
            raise DomainError("column name must not be empty")
        if len(self.delimiter) != 1:
            raise DomainError("delimiter must be a single character")


def _read_column(rows: Iterable[dict[str, str]], column: str) -> list[float]:
    values = []
    for row_number, row in enumerate(rows, start=1):
        if column not in row:
            raise ParseError(f"missing column {column!r}", row_number)
        cell = (row.get(column) or "").strip()
        try:
            value = float(cell)
        except ValueError:
            raise ParseError(f"non-numeric value {cell!r} in column {column!r}", row_number) from None
        if not math.isfinite(value):
            raise ParseError(f"non-finite value {cell!r} in column {column!r}", row_number)
        values.append(value)
    return values


def ingest_rows(rows: Iterable[dict[str, str]], spec: IngestSpec) -> ReturnSeries:
    values = _read_column(rows, spec.column)
    if spec.kind is InputKind.prices:
        for row_number, price in enumerate(values, start=1):
            if price <= 0.0:
                raise ParseError(f"non-positive price {price}", row_number)
        if len(values) < 2:
            raise ParseError("prices need at least two rows")
        returns = np.diff(np.log(values))
        if spec.scale100:
            returns = 100.0 * returns
    else:
        returns = np.asarray(values, dtype=float)
    try:
        return ReturnSeries(returns)
    except DomainError as exc:
        raise ParseError(str(exc)) from exc


def ingest(path: Path, spec: IngestSpec | None = None) -> ReturnSeries:
    spec = spec or IngestSpec()
    path = Path(path)
    if not path.exists():
        raise ParseError(f"input file not found: {path}")
    with path.open("r", encoding="utf-8-sig", newline="") as handle:
        reader = csv.DictReader(handle, delimiter=spec.delimiter)
        if reader.fieldnames is None:
            raise ParseError(f"{path} has no header row")
        if spec.column not in reader.fieldnames:
            raise ParseError(f"missing column {spec.column!r}; header has {reader.fieldnames}")
        series = ingest_rows(reader, spec)
    logger.info("Read %d returns from %s", series.T, path)
    return series
