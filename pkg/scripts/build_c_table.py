from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Iterable

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from spgarch.settings import get_cache_dir, get_log_level  # noqa: E402
from spgarch.spline import TableConfig  # noqa: E402


def parse_args(argv: Iterable[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Precompute the c table for a decile knot pool")
    parser.add_argument("--knot-nu", type=float, default=8.0, help="df of the t whose quantiles place the knots")
    parser.add_argument("--n-knots", type=int, default=9)
    parser.add_argument("--grid-size", type=int, default=400)
    parser.add_argument("--cache-dir", type=Path, default=None)
    return parser.parse_args(argv)


def main(argv: Iterable[str] | None = None) -> int:
    logging.basicConfig(level=get_log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = parse_args(argv)
    config = TableConfig(knot_nu=args.knot_nu, n_knots=args.n_knots, grid_size=args.grid_size)
    table = config.load_table(args.cache_dir or get_cache_dir())
    print(
        "c table ready: "
        f"knots={table.pool.size}, grid={table.nu_grid.size}, "
        f"nu=[{table.nu_grid[0]:.3f}, {table.nu_grid[-1]:.1f}]"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
