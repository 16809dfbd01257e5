import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import special

ROOT = Path(__file__).resolve().parents[1]
sys.path.append(str(ROOT))

import spgarch.volmodel as volmodel
from spgarch.errors import DomainError
from spgarch.innovation import StdTDist, std_t_sample
from spgarch.spline import KnotPool, SplineSpec, default_knot_pool, eval_g
from spgarch.volmodel import (
    NEG_INF,
    FamilyTag,
    FamilyVector,
    ParametricFamily,
    ParamVector,
    ReturnSeries,
    eval_parametric_g,
    evaluate,
    family_persistence,
    filter_volatility,
    in_theta,
    log_likelihood,
    parametric_to_spline,
    simulate_path,
)


def _direct_log_likelihood(tag, params, nu, mu, omega, r):
    """Plain-python recursion on the parametric form."""
    sigma2 = float(np.var(r))
    const = special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * math.log(math.pi * (nu - 2.0))
    total = 0.0
    for value in r:
        z = (value - mu) / math.sqrt(sigma2)
        total += const - 0.5 * (nu + 1.0) * math.log1p(z * z / (nu - 2.0)) - 0.5 * math.log(sigma2)
        if tag is FamilyTag.garch:
            g = params[0] + params[1] * z * z
        elif tag is FamilyTag.gjr:
            g = params[0] + (params[1] + params[2] * (z < 0.0)) * z * z
        elif tag is FamilyTag.beta_t:
            u = (nu + 1.0) * z * z / (nu - 2.0 + z * z)
            g = params[0] + (params[1] + params[2] * (z < 0.0)) * u
        else:
            g = params[0] + params[1] * (z - params[2]) ** 2
        sigma2 = omega + g * sigma2
    return total


def _random_params(tag, rng):
    beta = rng.uniform(0.5, 0.8)
    if tag is FamilyTag.garch:
        return (beta, rng.uniform(0.01, 0.12))
    if tag in (FamilyTag.gjr, FamilyTag.beta_t):
        return (beta, rng.uniform(0.01, 0.06), rng.uniform(0.0, 0.1))
    return (beta, rng.uniform(0.01, 0.08), rng.uniform(-1.0, 1.0))


def test_spline_mapping_reproduces_parametric_likelihood():
    rng = np.random.default_rng(5)
    for trial in range(50):
        tag = (FamilyTag.garch, FamilyTag.gjr, FamilyTag.nagarch)[trial % 3]
        params = _random_params(tag, rng)
        nu = rng.uniform(4.0, 30.0)
        mu = rng.normal(0.0, 0.05)
        omega = rng.uniform(0.02, 0.2)
        r = rng.standard_normal(1000)
        family = ParametricFamily(tag, params, nu=nu)
        spline = parametric_to_spline(family)
        mapped = ParamVector(nu, mu, omega, spline)
        direct = _direct_log_likelihood(tag, params, nu, mu, omega, r)
        series = ReturnSeries(r)
        assert log_likelihood(mapped, series) == pytest.approx(direct, abs=1e-9)
        assert log_likelihood(FamilyVector(family, mu, omega), series) == pytest.approx(direct, abs=1e-9)


def test_parametric_g_and_its_spline_form_agree():
    grid = np.linspace(-4.0, 4.0, 81)
    family = ParametricFamily(FamilyTag.nagarch, (0.8, 0.1, 0.4))
    spline = parametric_to_spline(family)
    assert np.allclose(eval_g(spline, grid), eval_parametric_g(family, grid), atol=1e-14)
    assert parametric_to_spline(ParametricFamily(FamilyTag.beta_t, (0.8, 0.1, 0.0))) is None


def test_gjr_asymmetry():
    family = ParametricFamily(FamilyTag.gjr, (0.8, 0.1, 0.15))
    assert eval_parametric_g(family, -1.0) - eval_parametric_g(family, 1.0) == pytest.approx(0.15)


def test_family_persistence_values():
    assert family_persistence(ParametricFamily(FamilyTag.garch, (0.85, 0.1))) == pytest.approx(0.95)
    assert family_persistence(ParametricFamily(FamilyTag.gjr, (0.8, 0.1, 0.15))) == pytest.approx(0.975)
    assert family_persistence(ParametricFamily(FamilyTag.nagarch, (0.8, 0.1, 0.5))) == pytest.approx(0.925)


def test_beta_t_persistence_matches_monte_carlo():
    family = ParametricFamily(FamilyTag.beta_t, (0.82, 0.15, 0.0), nu=5.0)
    eps = std_t_sample(StdTDist(5.0), np.random.default_rng(8), size=1_000_000)
    assert np.mean(eval_parametric_g(family, eps)) == pytest.approx(family_persistence(family), abs=2e-3)


def test_filter_starts_at_sample_variance():
    r = ReturnSeries(np.array([0.5, -1.0, 0.2, 0.8]))
    theta = FamilyVector(ParametricFamily(FamilyTag.garch, (0.85, 0.1)), 0.0, 0.1)
    path = filter_volatility(theta, r)
    assert path.sigma2.size == 5
    assert path.sigma2[0] == pytest.approx(np.var(r.values))
    eps = 0.5 / math.sqrt(path.sigma2[0])
    assert path.sigma2[1] == pytest.approx(0.1 + (0.85 + 0.1 * eps * eps) * path.sigma2[0])
    assert path.forecast == path.sigma2[-1]


def test_constant_series_has_no_starting_variance():
    r = ReturnSeries(np.full(10, 0.3))
    theta = FamilyVector(ParametricFamily(FamilyTag.garch, (0.85, 0.1)), 0.0, 0.1)
    with pytest.raises(DomainError):
        filter_volatility(theta, r)


def test_out_of_space_parameters_give_neg_inf():
    r = ReturnSeries(np.random.default_rng(1).standard_normal(200))
    base = ParametricFamily(FamilyTag.garch, (0.85, 0.1), nu=8.0)
    assert log_likelihood(FamilyVector(base, 0.0, -0.1), r) == NEG_INF
    assert log_likelihood(FamilyVector(ParametricFamily(FamilyTag.garch, (0.95, 0.1)), 0.0, 0.1), r) == NEG_INF
    assert log_likelihood(FamilyVector(ParametricFamily(FamilyTag.garch, (0.85, 0.1), nu=250.0), 0.0, 0.1), r) == NEG_INF
    assert not in_theta(FamilyVector(ParametricFamily(FamilyTag.garch, (0.85, 0.1), nu=2.0), 0.0, 0.1), r)
    assert in_theta(FamilyVector(base, 0.0, 0.1), r)


def test_negative_variance_path_is_rejected():
    # Strongly decreasing g for large shocks drives the variance negative.
    r = ReturnSeries(np.array([0.0, 6.0, 0.1, 0.1]))
    spline = SplineSpec(0.9, 0.0, 0.0, (-0.5,), KnotPool((0.5,)))
    theta = ParamVector(8.0, 0.0, 0.1, spline)
    path = filter_volatility(theta, r)
    assert not path.positive
    loglik, _ = evaluate(theta, r)
    assert loglik == NEG_INF


def test_simulated_garch_variance_matches_unconditional_value():
    theta = FamilyVector(ParametricFamily(FamilyTag.garch, (0.85, 0.1), nu=8.0), 0.0, 0.1)
    rng = np.random.default_rng(99)
    paths = [simulate_path(theta, 100_000, rng).values for _ in range(4)]
    assert np.var(np.concatenate(paths)) == pytest.approx(2.0, rel=0.05)


def test_simulation_is_seeded():
    theta = FamilyVector(ParametricFamily(FamilyTag.gjr, (0.8, 0.1, 0.15), nu=5.0), 0.0, 0.1)
    a = simulate_path(theta, 500, np.random.default_rng(7)).values
    b = simulate_path(theta, 500, np.random.default_rng(7)).values
    assert np.array_equal(a, b)


def test_simulation_needs_stationarity():
    theta = FamilyVector(ParametricFamily(FamilyTag.garch, (0.9, 0.1)), 0.0, 0.1)
    with pytest.raises(DomainError):
        simulate_path(theta, 10, np.random.default_rng(0))


def test_return_series_validation():
    with pytest.raises(DomainError):
        ReturnSeries(np.array([1.0]))
    with pytest.raises(DomainError):
        ReturnSeries(np.array([1.0, np.nan]))
    assert ReturnSeries(np.arange(5.0)).head(3).T == 3


def test_beta_t_kernel_matches_direct_recursion():
    rng = np.random.default_rng(15)
    for _ in range(20):
        params = _random_params(FamilyTag.beta_t, rng)
        nu = rng.uniform(3.0, 60.0)
        mu = rng.normal(0.0, 0.05)
        omega = rng.uniform(0.02, 0.2)
        r = rng.standard_t(5.0, size=800)
        family = ParametricFamily(FamilyTag.beta_t, params, nu=nu)
        direct = _direct_log_likelihood(FamilyTag.beta_t, params, nu, mu, omega, r)
        assert log_likelihood(FamilyVector(family, mu, omega), ReturnSeries(r)) == pytest.approx(direct, abs=1e-9)


def test_beta_t_score_worked_value():
    family = ParametricFamily(FamilyTag.beta_t, (0.0, 1.0, 0.4), nu=5.0)
    # u = (5 + 1) * 1 / (5 - 2 + 1)
    assert eval_parametric_g(family, 1.0) == pytest.approx(1.5, abs=1e-15)
    assert eval_parametric_g(family, -1.0) == pytest.approx(1.4 * 1.5, abs=1e-15)


def test_beta_t_tends_to_gjr_for_large_nu():
    grid = np.linspace(-3.0, 3.0, 61)
    gjr = eval_parametric_g(ParametricFamily(FamilyTag.gjr, (0.8, 0.05, 0.1)), grid)

    def gap(nu):
        beta_t = ParametricFamily(FamilyTag.beta_t, (0.8, 0.05, 0.1), nu=nu)
        return np.max(np.abs(eval_parametric_g(beta_t, grid) - gjr))

    assert gap(1e6) < gap(200.0) < gap(20.0)
    assert gap(200.0) < 0.05
    assert gap(1e6) < 1e-4


def test_constant_coefficient_function_has_geometric_path():
    r = ReturnSeries(np.random.default_rng(3).standard_normal(60))
    theta = ParamVector(8.0, 0.1, 0.2, SplineSpec(0.9, 0.0, 0.0))
    path = filter_volatility(theta, r)
    k = np.arange(r.T + 1)
    start = r.sample_variance()
    expected = 0.2 * (1.0 - 0.9**k) / (1.0 - 0.9) + 0.9**k * start
    assert np.allclose(path.sigma2, expected, rtol=1e-13)


def test_two_observation_path_by_hand():
    r = ReturnSeries(np.array([1.0, -2.0]))
    theta = FamilyVector(ParametricFamily(FamilyTag.gjr, (0.7, 0.1, 0.2), nu=6.0), 0.5, 0.2)
    path = filter_volatility(theta, r)
    # var = 2.25; eps_1 = 1/3; eps_2^2 = 6.25 / 1.8 with the leverage term on.
    assert np.allclose(path.sigma2, [2.25, 1.8, 3.335], rtol=1e-14)
    const = math.lgamma(3.5) - math.lgamma(3.0) - 0.5 * math.log(4.0 * math.pi)
    expected = sum(
        const - 3.5 * math.log1p(z2 / 4.0) - 0.5 * math.log(s2) for z2, s2 in ((0.25 / 2.25, 2.25), (6.25 / 1.8, 1.8))
    )
    assert log_likelihood(theta, r) == pytest.approx(expected, abs=1e-12)


def test_pinned_start_extends_by_one_step():
    r = ReturnSeries(np.random.default_rng(4).standard_normal(50))
    family = ParametricFamily(FamilyTag.gjr, (0.8, 0.05, 0.1), nu=7.0)
    theta = FamilyVector(family, 0.02, 0.1)
    full = filter_volatility(theta, r, sigma2_1=1.3)
    head = filter_volatility(theta, r.head(49), sigma2_1=1.3)
    assert np.array_equal(head.sigma2, full.sigma2[:50])
    eps_last = (r.values[-1] - 0.02) / math.sqrt(full.sigma2[49])
    assert full.forecast == pytest.approx(0.1 + eval_parametric_g(family, eps_last) * full.sigma2[49], rel=1e-14)
    assert filter_volatility(theta, r.head(49)).sigma2[0] != full.sigma2[0]


def test_in_theta_is_false_for_a_table_of_another_pool(c_table):
    r = ReturnSeries(np.random.default_rng(6).standard_normal(100))
    spline = SplineSpec(0.8, 0.0, 0.05, (0.05,), KnotPool((0.0,)))
    theta = ParamVector(8.0, 0.0, 0.1, spline)
    assert in_theta(theta, r)
    assert not in_theta(theta, r, c_table)
    matching = ParamVector(8.0, 0.0, 0.1, SplineSpec(0.8, 0.0, 0.05, pool=default_knot_pool()))
    assert in_theta(matching, r, c_table)


def test_sample_variance_is_computed_once(monkeypatch):
    values = np.random.default_rng(9).standard_normal(300)
    r = ReturnSeries(values)
    assert r.sample_variance() == float(np.var(values))

    def no_variance(*args, **kwargs):
        raise AssertionError("variance recomputed")

    monkeypatch.setattr(volmodel.np, "var", no_variance)
    theta = FamilyVector(ParametricFamily(FamilyTag.garch, (0.85, 0.1)), 0.0, 0.1)
    assert math.isfinite(log_likelihood(theta, r))
    assert r.sample_variance() == filter_volatility(theta, r).sigma2[0]
