import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.append(str(ROOT))

from spgarch.errors import ContractViolation, DomainError
from spgarch.innovation import StdTDist, std_t_quantile, std_t_sample
from spgarch.spline import (
    CTable,
    Indicator,
    KnotPool,
    SplineSpec,
    TableConfig,
    build_c_table,
    compute_c,
    compute_c_gaussian,
    default_knot_pool,
    default_nu_grid,
    eval_g,
    eval_g_batch,
    load_c_table,
    load_or_build_c_table,
    persistence,
    save_c_table,
    truncated_power,
)


def test_default_pool_sits_on_deciles():
    pool = default_knot_pool()
    dist = StdTDist(8.0)
    assert pool.size == 9
    assert pool.knots[4] == 0.0
    assert pool.knots[0] == pytest.approx(std_t_quantile(dist, 0.1))
    assert pool.knots[0] == pytest.approx(-pool.knots[-1])


def test_knots_must_increase():
    with pytest.raises(DomainError):
        KnotPool((0.5, 0.5))


def test_truncated_power():
    assert truncated_power(1.5, 1.0, 2) == pytest.approx(0.25)
    assert truncated_power(0.5, 1.0, 2) == 0.0
    assert np.allclose(truncated_power(np.array([0.0, 2.0]), 1.0, 1), [0.0, 1.0])


def test_eval_g_matches_hand_computation():
    pool = KnotPool((-0.77, -0.473))
    spec = SplineSpec(1.1, 0.0, 0.0, (-0.48, 0.58), pool)
    eps = 0.2
    expected = 1.1 - 0.48 * (eps + 0.77) ** 2 + 0.58 * (eps + 0.473) ** 2
    assert eval_g(spec, eps) == pytest.approx(expected, abs=1e-14)
    assert eval_g(spec, -1.0) == pytest.approx(1.1)


def test_eval_g_batch_agrees_with_scalar_evaluation():
    pool = default_knot_pool()
    rng = np.random.default_rng(3)
    coefs = rng.normal(size=(4, 3))
    beta = rng.normal(size=(4, pool.size))
    grid = np.linspace(-3.0, 3.0, 13)
    batch = eval_g_batch(coefs, beta, pool.as_array(), grid)
    for i in range(4):
        spec = SplineSpec(*coefs[i], tuple(beta[i]), pool)
        assert np.allclose(batch[i], eval_g(spec, grid), atol=1e-12)


def test_indicator_follows_nonzero_coefficients():
    pool = KnotPool((-1.0, 0.0, 1.0))
    spec = SplineSpec(0.9, 0.0, 0.05, (0.0, 0.2, 0.0), pool)
    assert spec.indicator == Indicator((0, 1, 0))
    assert Indicator.from_bitstring("010") == spec.indicator
    with pytest.raises(ContractViolation):
        SplineSpec(0.9, 0.0, 0.05, (0.1, 0.2, 0.0), pool, Indicator((0, 1, 0)))
    with pytest.raises(ContractViolation):
        SplineSpec(0.9, 0.0, 0.05, (0.1, 0.2), pool)


def test_c_at_zero_knot_is_one_half():
    assert compute_c(0.0, 8.0) == pytest.approx(0.5, abs=1e-10)
    assert compute_c_gaussian(0.0) == pytest.approx(0.5, abs=1e-15)


def test_c_far_left_knot_tends_to_second_moment():
    # For k << 0 almost all mass lies above the knot: c = 1 + k^2.
    assert compute_c(-30.0, 8.0) == pytest.approx(1.0 + 900.0, rel=1e-6)


def test_c_uses_gaussian_form_only_beyond_the_cap():
    assert compute_c(0.7, 250.0) == compute_c_gaussian(0.7)
    assert compute_c(0.7, 200.0) != compute_c_gaussian(0.7)
    assert compute_c(0.7, 200.0) == pytest.approx(compute_c_gaussian(0.7), abs=2e-3)
    assert compute_c(0.7, 150.0) == pytest.approx(compute_c_gaussian(0.7), rel=1e-2)


def test_c_matches_monte_carlo_and_is_close_to_gaussian():
    pool = default_knot_pool()
    rng = np.random.default_rng(2024)
    eps = std_t_sample(StdTDist(8.0), rng, size=2_000_000)
    for knot in pool.knots:
        c_value = compute_c(knot, 8.0)
        terms = np.clip(eps - knot, 0.0, None) ** 2
        se = terms.std() / math.sqrt(terms.size)
        assert abs(c_value - terms.mean()) < 4.0 * se
        gaussian = compute_c_gaussian(knot)
        assert abs(c_value - gaussian) < 0.05 * max(gaussian, 1.0)


def test_nu_grid_is_uniform_in_inverse_nu():
    grid = default_nu_grid(10)
    assert grid[0] == pytest.approx(2.02)
    assert grid[-1] == pytest.approx(200.0)
    assert np.allclose(np.diff(1.0 / grid[::-1]), np.diff(1.0 / grid[::-1])[0])


def test_table_lookup_is_exact_at_nodes(c_table):
    j = 7
    nu = c_table.nu_grid[j]
    assert np.array_equal(c_table.lookup(nu), c_table.values[:, j])
    assert np.array_equal(c_table.lookup(c_table.nu_grid[-1]), c_table.values[:, -1])
    between = 0.5 * (c_table.nu_grid[j] + c_table.nu_grid[j + 1])
    lo, hi = np.minimum(c_table.values[:, j], c_table.values[:, j + 1]), np.maximum(c_table.values[:, j], c_table.values[:, j + 1])
    value = c_table.lookup(between)
    assert np.all(value >= lo - 1e-15) and np.all(value <= hi + 1e-15)


def test_table_interpolation_error_is_small(c_table):
    for nu in (4.3, 9.1, 37.0):
        direct = np.array([compute_c(k, nu) for k in c_table.pool.knots])
        assert np.allclose(c_table.lookup(nu), direct, rtol=1e-2, atol=1e-4)


def _production_bracket_table(pool, targets):
    # The nodes of the default grid around each target; interpolation between
    # adjacent nodes only ever reads those two nodes.
    grid = default_nu_grid()
    nodes = set()
    for nu in targets:
        j = int(np.searchsorted(grid, nu)) - 1
        nodes.update((j, j + 1))
    sub_grid = grid[sorted(nodes)]
    values = np.array([[compute_c(k, nu) for nu in sub_grid] for k in pool.knots])
    return CTable(pool, sub_grid, values)


def test_production_grid_lookup_is_accurate_off_grid():
    full = default_knot_pool()
    pool = KnotPool((full.knots[0], full.knots[4], full.knots[-1]))
    targets = (2.05, 3.3, 8.0, 50.0, 170.0, 185.0, 195.0, 199.5)
    table = _production_bracket_table(pool, targets)
    for nu in targets:
        direct = np.array([compute_c(k, nu) for k in pool.knots])
        assert np.max(np.abs(table.lookup(nu) - direct)) < 1e-4, nu


def test_lookup_outside_the_grid_computes_directly(c_table):
    for nu in (2.005, 2.015):
        direct = np.array([compute_c(k, nu) for k in c_table.pool.knots])
        assert np.allclose(c_table.lookup(nu), direct, rtol=1e-12, atol=1e-14)
    assert np.array_equal(c_table.lookup(1000.0), [compute_c_gaussian(k) for k in c_table.pool.knots])
    batch = c_table.lookup_many([2.005, c_table.nu_grid[3], 8.0])
    assert np.array_equal(batch[1], c_table.values[:, 3])
    assert np.allclose(batch[0], [compute_c(k, 2.005) for k in c_table.pool.knots])


def test_c_is_positive_and_strictly_decreasing_in_the_knot():
    knots = np.linspace(-3.0, 3.0, 13)
    for nu in (2.5, 8.0, 50.0, 200.0):
        values = np.array([compute_c(k, nu) for k in knots])
        assert np.all(values > 0.0)
        assert np.all(np.diff(values) < 0.0)
    gaussian = np.array([compute_c_gaussian(k) for k in knots])
    assert np.all(gaussian > 0.0) and np.all(np.diff(gaussian) < 0.0)


def test_c_far_from_the_centre():
    assert compute_c_gaussian(-10.0) == pytest.approx(101.0, rel=1e-12)
    assert compute_c_gaussian(10.0) == pytest.approx(0.0, abs=1e-20)
    for nu in (8.0, 200.0):
        assert compute_c(10.0, nu) == pytest.approx(0.0, abs=1e-4)
        assert compute_c(-10.0, nu) == pytest.approx(101.0, rel=1e-4)


def test_g_is_continuously_differentiable_at_every_knot():
    pool = default_knot_pool()
    rng = np.random.default_rng(17)
    spec = SplineSpec(0.8, 0.05, 0.1, tuple(rng.normal(scale=0.3, size=pool.size)), pool)
    h = 1e-6
    for knot in pool.knots:
        left, centre, right = eval_g(spec, knot - h), eval_g(spec, knot), eval_g(spec, knot + h)
        assert abs(right - left) < 1e-5
        slope_left = (centre - left) / h
        slope_right = (right - centre) / h
        assert slope_left == pytest.approx(slope_right, abs=1e-4)


def test_persistence_matches_monte_carlo_for_random_specs():
    pool = default_knot_pool()
    rng = np.random.default_rng(99)
    for _ in range(3):
        nu = float(rng.uniform(6.0, 30.0))
        beta = rng.normal(scale=0.05, size=pool.size) * (rng.random(pool.size) < 0.5)
        spec = SplineSpec(float(rng.uniform(0.5, 0.9)), float(rng.normal(scale=0.05)), float(rng.uniform(0.0, 0.1)), tuple(beta), pool)
        eps = std_t_sample(StdTDist(nu), rng, size=400_000)
        g = eval_g(spec, eps)
        se = g.std() / math.sqrt(g.size)
        assert abs(persistence(spec, nu) - g.mean()) < 5.0 * se + 1e-12


def test_table_grid_must_cover_parameter_range():
    with pytest.raises(DomainError):
        build_c_table(KnotPool((0.0,)), [3.0, 100.0])


def test_table_cache_round_trip_is_bit_exact(tmp_path, c_table):
    path = tmp_path / "table.npz"
    save_c_table(c_table, path)
    loaded = load_c_table(path)
    assert loaded.pool == c_table.pool
    assert np.array_equal(loaded.values, c_table.values)
    assert np.array_equal(loaded.nu_grid, c_table.nu_grid)


def test_load_or_build_reuses_cache(tmp_path):
    pool = KnotPool((-0.5, 0.5))
    grid = default_nu_grid(6)
    first = load_or_build_c_table(pool, tmp_path, grid)
    files = list(tmp_path.glob("ctable-*.npz"))
    assert len(files) == 1
    second = load_or_build_c_table(pool, tmp_path, grid)
    assert np.array_equal(first.values, second.values)


def test_table_config_builds_its_pool(tmp_path):
    table = TableConfig(n_knots=3, grid_size=5).load_table(tmp_path)
    assert table.pool == default_knot_pool(8.0, 3)
    assert table.values.shape == (3, 5)


def test_persistence_with_and_without_table(c_table):
    pool = c_table.pool
    beta = np.zeros(pool.size)
    beta[2] = 0.1
    spec = SplineSpec(0.8, 0.02, 0.05, tuple(beta), pool)
    node = float(c_table.nu_grid[12])
    expected = 0.85 + 0.1 * compute_c(pool.knots[2], node)
    assert persistence(spec, node) == pytest.approx(expected, abs=1e-12)
    assert persistence(spec, node, c_table) == pytest.approx(expected, abs=1e-10)
    other = CTable(KnotPool((0.0,)), c_table.nu_grid, c_table.values[:1])
    with pytest.raises(ContractViolation):
        persistence(spec, node, other)
