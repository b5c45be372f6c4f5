import math

import numpy as np
import pytest

from levypide.analytic_pricers import EuropeanOption, MarketScenario, bs_price, merton_series_price
from levypide.errors import AssumptionViolation, ParameterDomainError
from levypide.feedback_shift import linear_strategy, tanh_strategy
from levypide.levy_measures import LevyMeasureSpec, levy_variance, quadrature_rule
from levypide.pide_solver import (PideConfig, PideGrid, PideSolver, build_integral_weights,
                                  explicit_stability_number, price_from_surface, solve_feedback_pide,
                                  solve_linear_pide)

from .conftest import TABLE_SPOTS


def prices(surface, spots):
    return np.array([V for _, V in price_from_surface(surface, spots)])


def test_grid_has_exact_zero_node():
    grid = PideGrid(L=4.0, N=400, M=200)
    assert grid.x[200] == 0.0
    assert grid.dx == pytest.approx(0.02)
    assert grid.x[0] == pytest.approx(-4.0) and grid.x[-1] == pytest.approx(4.0)
    assert grid.dt(1.0) == pytest.approx(0.005)
    for bad in (dict(N=401), dict(N=8), dict(M=1), dict(L=0.0)):
        with pytest.raises(ParameterDomainError):
            PideGrid(**bad)


def test_config_validation():
    assert PideConfig(xi_mode='first-order').xi_mode == 'first_order'
    assert PideConfig().delta_factor == -1.0
    assert PideConfig(delta_sign='plus').delta_factor == 1.0
    with pytest.raises(ParameterDomainError):
        PideConfig(delta_sign='both')
    with pytest.raises(ParameterDomainError):
        PideConfig(feedback_margin=1.0)


def test_null_measure_gives_empty_weights():
    weights = build_integral_weights(PideGrid(N=64), LevyMeasureSpec.null())
    assert weights.is_empty
    assert np.all(weights.apply(np.ones(65)) == 0.0)
    assert explicit_stability_number(weights, 0.01) == 0.0


def test_operator_on_quadratic(merton):
    # u = x^2: every stencil is exact up to the linear interpolation error
    grid = PideGrid(L=4.0, N=2000, M=10)
    weights = build_integral_weights(grid, merton)
    value = weights.apply(grid.x ** 2)[grid.N // 2]
    assert value == pytest.approx(levy_variance(merton), abs=1e-6)


def test_operator_kernel(merton):
    grid = PideGrid(L=4.0, N=400, M=10)
    weights = build_integral_weights(grid, merton)
    middle = grid.N // 2
    assert abs(weights.apply(np.ones(grid.N + 1))[middle]) < 1e-12
    assert abs(weights.apply_compensated(np.exp(grid.x))[middle]) < 1e-4


def test_weight_table_local_parts(merton):
    grid = PideGrid(L=4.0, N=400, M=10)
    config = PideConfig()
    weights = build_integral_weights(grid, merton, config=config)
    rule = quadrature_rule(merton, inner_cut=grid.dx, nodes_per_panel=config.nodes_per_panel,
                           panel_width=config.panel_width)
    assert weights.intensity[0] + rule.inner_w.sum() == pytest.approx(0.1, rel=1e-7)
    # |z| < dx is carried by inner_variance, not by the outer mean
    assert weights.mean_shift[100] == pytest.approx(-0.02 - rule.inner_z @ rule.inner_w, rel=1e-7)
    assert np.all(weights.inner_variance >= 0)
    assert explicit_stability_number(weights, grid.dt(1.0)) <= grid.dt(1.0) * 0.1 * (1.0 + 1e-6)


def test_shift_changes_the_targets(merton):
    grid = PideGrid(L=4.0, N=200, M=10)
    strategy = tanh_strategy(0.5)
    plain = build_integral_weights(grid, merton)
    shifted = build_integral_weights(
        grid, merton, xi_provider=lambda tau, x, z: z + 0.05 * np.exp(-z) * (strategy(tau, x + z) - strategy(tau, x)))
    assert not np.allclose(plain.delta, shifted.delta)
    assert np.allclose(plain.intensity, shifted.intensity)


def test_null_measure_reproduces_black_scholes(put_scenario):
    spots = np.linspace(80.0, 125.0, 10)
    exact = bs_price(spots, put_scenario)
    errors = []
    for grid in (PideGrid(L=4.0, N=400, M=200), PideGrid(L=4.0, N=800, M=800)):
        surface = solve_linear_pide(put_scenario, LevyMeasureSpec.null(), grid=grid)
        errors.append(np.max(np.abs(prices(surface, spots) - exact) / exact))
    assert errors[0] < 5e-3
    assert 2.0 * errors[1] <= errors[0]


@pytest.mark.parametrize('r', [0.0, 0.1])
def test_merton_pide_matches_series(r, merton):
    scenario = MarketScenario(sigma=0.23, r=r, option=EuropeanOption(100.0, 1.0, 'put'))
    surface = solve_linear_pide(scenario, merton, grid=PideGrid(L=4.0, N=400, M=200))
    spots = [90.0, 100.0, 110.0]
    reference = [merton_series_price(S, scenario, merton).price for S in spots]
    np.testing.assert_allclose(prices(surface, spots), reference, atol=2e-2)


def test_unshifted_march_agrees(put_scenario, merton):
    grid = PideGrid(L=4.0, N=400, M=200)
    shifted = solve_linear_pide(put_scenario, merton, grid=grid)
    direct = solve_linear_pide(put_scenario, merton, grid=grid, config=PideConfig(shift=False))
    np.testing.assert_allclose(prices(direct, [100.0]), prices(shifted, [100.0]), atol=5e-2)


@pytest.mark.parametrize('r', [0.0, 0.1])
def test_table_ordering(r, merton, vg):
    scenario = MarketScenario(sigma=0.23, r=r, option=EuropeanOption(100.0, 1.0, 'put'))
    grid = PideGrid(L=4.0, N=400, M=100)
    bs = bs_price(np.array(TABLE_SPOTS), scenario)
    mer = prices(solve_linear_pide(scenario, merton, grid=grid), TABLE_SPOTS)
    var_gamma = prices(solve_linear_pide(scenario, vg, grid=grid), TABLE_SPOTS)
    assert np.all(var_gamma > mer)
    assert np.all(mer > bs)
    for column in (mer, var_gamma):
        assert np.all(column > 0)
        assert np.all(np.diff(column) < 0)


def test_feedback_without_rho_is_linear(put_scenario, merton):
    grid = PideGrid(N=200, M=40)
    strategy = tanh_strategy(0.5)
    linear = solve_linear_pide(put_scenario, merton, strategy, 0.0, grid)
    feedback = solve_feedback_pide(put_scenario, merton, strategy, 0.0, grid)
    np.testing.assert_allclose(feedback.values, linear.values, rtol=0, atol=1e-12)


def test_small_rho_moves_prices_slightly(put_scenario, merton):
    grid = PideGrid(N=200, M=40)
    strategy = tanh_strategy(0.5)
    base = prices(solve_linear_pide(put_scenario, merton, strategy, 0.0, grid), [100.0])
    moved = prices(solve_feedback_pide(put_scenario, merton, strategy, 0.02, grid), [100.0])
    assert np.all(np.isfinite(moved))
    assert 0.0 < abs(moved[0] - base[0]) < 1.0


def test_exact_and_first_order_shift_are_close(put_scenario, merton):
    grid = PideGrid(N=200, M=40)
    strategy = tanh_strategy(0.5)
    results = []
    for mode in ('exact', 'first_order'):
        config = PideConfig(xi_mode=mode, truncation=3.0)
        results.append(prices(solve_linear_pide(put_scenario, merton, strategy, 0.02, grid, config), [100.0])[0])
    assert results[0] == pytest.approx(results[1], abs=5e-3)


def test_feedback_margin_violation(put_scenario, merton):
    with pytest.raises(AssumptionViolation) as info:
        solve_feedback_pide(put_scenario, merton, linear_strategy(1.0), 0.96, PideGrid(N=64, M=4))
    assert info.value.node is not None


def test_strategy_bound_is_checked(put_scenario, merton):
    with pytest.raises(AssumptionViolation):
        PideSolver(put_scenario, merton, linear_strategy(2.0), 0.5)


def test_price_domain_and_export(put_scenario, tmp_path):
    surface = solve_linear_pide(put_scenario, LevyMeasureSpec.null(), grid=PideGrid(L=1.0, N=32, M=4))
    with pytest.raises(ParameterDomainError):
        price_from_surface(surface, [100.0 * math.exp(1.5)])
    path = surface.export(tmp_path / 'surface.txt', every=2)
    lines = path.read_text().splitlines()
    assert lines[0] == '# tau x u'
    assert len(lines) == 1 + 3 * 33
