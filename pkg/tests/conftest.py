import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.append(str(ROOT))

os.environ.setdefault("DATABASE_URL", "sqlite:///./test_spgarch.db")

from spgarch.spline import build_c_table, default_knot_pool, default_nu_grid  # noqa: E402

# Coarse nu grid keeps the session table cheap; lookups interpolate in 1/nu.
TEST_GRID_SIZE = 40


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow statistical checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def c_table():
    return build_c_table(default_knot_pool(), default_nu_grid(TEST_GRID_SIZE))


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("ctable-cache")
    os.environ["SPGARCH_CACHE_DIR"] = str(path)
    return path
