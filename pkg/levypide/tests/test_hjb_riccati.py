import math
from types import SimpleNamespace

import numpy as np
import pytest

from levypide.errors import ConvergenceError, ParameterDomainError
from levypide.hjb_riccati import (AprioriBounds, DriftAlpha, DriftSpec, HjbConfig, HjbGrid, UtilitySpec,
                                  apriori_bounds, export_surface, optimal_weights_surface, phi0_from_utility,
                                  solve_riccati_pde, value_function_shape)
from levypide.portfolio_alpha import PortfolioProblem, alpha_value, breakpoints_n2

from .conftest import PENSION_MU, PENSION_SIGMA

DARA = UtilitySpec.dara(a0=9, a1=8, x_star=2, gamma=6)


@pytest.fixture(scope='module')
def pension_surface():
    problem = PortfolioProblem(PENSION_MU, PENSION_SIGMA)
    grid = HjbGrid(X=5.0, Nx=200, T=1.0, Nt=200)
    return solve_riccati_pde(problem, DriftSpec(), phi0_from_utility(DARA, grid), grid=grid)


@pytest.fixture
def small_grid():
    return HjbGrid(X=5.0, Nx=40, T=0.5, Nt=10)


def test_grid_geometry():
    grid = HjbGrid(X=5.0, Nx=200, T=1.0, Nt=200)
    assert grid.dx == pytest.approx(0.05)
    assert grid.dt == pytest.approx(0.005)
    assert grid.x[0] == pytest.approx(-4.975)
    assert grid.x[-1] == pytest.approx(4.975)
    assert grid.taus.size == 201 and grid.taus[-1] == 1.0


@pytest.mark.parametrize('kwargs', [dict(X=0.0), dict(T=-1.0), dict(Nx=10), dict(Nt=1)])
def test_grid_rejects_bad_sizes(kwargs):
    with pytest.raises(ParameterDomainError):
        HjbGrid(**kwargs)


def test_dara_phi0():
    grid = HjbGrid(X=5.0, Nx=200)
    phi0 = phi0_from_utility(DARA, grid)
    assert np.all(phi0[grid.x <= 2] == 9.0)
    assert np.all(phi0[grid.x > 2] == 8.0)
    truncated = phi0_from_utility(UtilitySpec.dara(9, 8, 2, gamma=1.0), grid)
    assert np.all(truncated[np.abs(grid.x) >= 1.0] == 0.0)
    assert np.all(truncated[np.abs(grid.x) < 1.0] == 9.0)


def test_arctan_and_sampled_phi0():
    x = np.array([-2.0, 0.0, 1.0, 3.0])
    np.testing.assert_allclose(phi0_from_utility(UtilitySpec.arctan(), x), [-0.8, 0.0, 1.0, 0.6])
    sampled = UtilitySpec.sampled([-1.0, 1.0], [2.0, 4.0])
    np.testing.assert_allclose(phi0_from_utility(sampled, [-1.0, 0.0, 0.5]), [2.0, 3.0, 3.5])


@pytest.mark.parametrize('make', [
    lambda: UtilitySpec.dara(0.0, 8, 2),
    lambda: UtilitySpec.dara(9, 8, 2, gamma=0.0),
    lambda: UtilitySpec('crra'),
    lambda: UtilitySpec('sampled'),
    lambda: UtilitySpec.sampled([1.0, 0.0], [2.0, 3.0]),
])
def test_invalid_utility(make):
    with pytest.raises(ParameterDomainError):
        make()


def test_drift_spec():
    drift = DriftSpec(C=0.02, y_minus=2.0)
    assert drift.rate == pytest.approx(0.01)
    np.testing.assert_allclose(drift.inflow_term([0.0, math.log(4.0)]), [0.0, 0.005])
    assert DriftSpec().rate == 0.0
    with pytest.raises(ParameterDomainError):
        DriftSpec(C=math.nan)
    with pytest.raises(ParameterDomainError):
        DriftSpec(y_minus=0.0)


def test_drift_alpha_shifts_argument(pension_problem):
    alpha, slope = DriftAlpha(pension_problem).evaluate(np.zeros(2), np.array([8.0, 9.0]))
    assert alpha[0] == pytest.approx(-0.0513935, abs=1e-6)
    assert alpha[1] == pytest.approx(-0.0511924, abs=1e-6)
    bp = breakpoints_n2(pension_problem)
    assert slope[0] == pytest.approx(bp.slope(9.0), rel=1e-10)
    plain = DriftAlpha(pension_problem, DriftSpec(ito_correction=False)).evaluate(0.0, 9.0)[0]
    assert plain == pytest.approx(alpha_value(pension_problem, 9.0).alpha, abs=1e-14)


def test_drift_alpha_subtracts_inflow(pension_problem):
    drift = DriftSpec(C=0.01, y_minus=1.0)
    x = np.array([-1.0, 1.0])
    with_inflow, _ = DriftAlpha(pension_problem, drift).evaluate(x, np.array([8.0, 8.0]))
    without, _ = DriftAlpha(pension_problem).evaluate(x, np.array([8.0, 8.0]))
    np.testing.assert_allclose(without - with_inflow, [0.0, 0.01 * math.exp(-1.0)], atol=1e-15)


def test_drift_alpha_rejects_phi_below_minus_one(pension_problem):
    with pytest.raises(ParameterDomainError):
        DriftAlpha(pension_problem).evaluate(0.0, -1.5)


def test_apriori_bounds(pension_problem):
    x = np.linspace(-1.0, 3.0, 9)
    bounds = apriori_bounds(pension_problem, phi0_from_utility(DARA, x), x)
    assert bounds.psi_lower == pytest.approx(-0.0513935, abs=1e-6)
    assert bounds.psi_upper == 0.0
    assert bounds.rate == 0.0
    grown = AprioriBounds(-1.0, 2.0, 0.5).envelope(2.0)
    assert grown == pytest.approx((-math.e, 2.0 * math.e))


def test_pension_solve(pension_surface):
    surface = pension_surface
    assert surface.phi.shape == (201, 200)
    assert surface.alpha.shape == (201, 200)
    assert np.all(np.isfinite(surface.phi))
    assert surface.violations == []
    assert surface.ledger.max_error < 1e-8
    assert len(surface.ledger.mass) == 201
    assert surface.phi.min() > 7.9 and surface.phi.max() < 9.1
    assert len(surface.newton_iterations) == 200
    assert min(surface.newton_iterations) >= 1


def test_pension_alpha_stays_in_envelope(pension_surface):
    lower, upper = pension_surface.bounds.envelope(1.0)
    assert pension_surface.alpha.min() >= lower - 1e-6
    assert pension_surface.alpha.max() <= upper + 1e-6


def test_sample_indices(pension_surface):
    assert pension_surface.sample([0.0, 0.5, 1.0]) == [0, 100, 200]
    with pytest.raises(ParameterDomainError):
        pension_surface.sample([1.5])


def test_pension_weights(pension_surface, pension_problem):
    weights = optimal_weights_surface(pension_problem, pension_surface)
    assert weights.theta.shape == (201, 200, 2)
    np.testing.assert_allclose(weights.theta.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(weights.theta >= -1e-12)
    assert np.all(weights.support == 3)
    assert weights.contours == []


def test_weights_contours_follow_support_switch(pension_problem):
    grid = HjbGrid(X=5.0, Nx=200)
    phi0 = phi0_from_utility(UtilitySpec.arctan(), grid)
    snapshot = SimpleNamespace(phi=phi0[None, :], x=grid.x, taus=np.array([0.0]))
    weights = optimal_weights_surface(pension_problem, snapshot)
    switch = breakpoints_n2(pension_problem).phi_minus - 1.0
    roots = np.sort(np.roots([switch, -2.0, switch]).real)
    assert len(weights.contours) == 2
    np.testing.assert_allclose([x for _, x in weights.contours], roots, atol=grid.dx)
    assert set(np.unique(weights.support)) == {1, 3}


def test_flip_source_run(pension_problem, small_grid):
    surface = solve_riccati_pde(pension_problem, DriftSpec(), phi0_from_utility(DARA, small_grid),
                                grid=small_grid, config=HjbConfig(flip_source=True))
    assert np.all(np.isfinite(surface.phi))
    assert surface.ledger.max_error < 1e-10


def test_inflow_run(pension_problem, small_grid):
    drift = DriftSpec(C=0.01, y_minus=1.0)
    surface = solve_riccati_pde(pension_problem, drift, phi0_from_utility(DARA, small_grid), grid=small_grid)
    assert np.all(np.isfinite(surface.phi))
    assert surface.bounds.rate == pytest.approx(0.01)
    assert surface.bounds.psi_lower < -0.05
    assert surface.violations == []


def test_newton_failure_raises(pension_problem, small_grid):
    config = HjbConfig(picard_tol=1e-15, picard_max_iter=1)
    with pytest.raises(ConvergenceError) as exc:
        solve_riccati_pde(pension_problem, DriftSpec(), phi0_from_utility(DARA, small_grid),
                          grid=small_grid, config=config)
    assert exc.value.iterations == 1


def test_phi0_shape_mismatch(pension_problem, small_grid):
    with pytest.raises(ParameterDomainError):
        solve_riccati_pde(pension_problem, DriftSpec(), np.full(small_grid.Nx + 1, 8.0), grid=small_grid)


@pytest.mark.parametrize('kwargs', [dict(picard_tol=0.0), dict(picard_max_iter=0), dict(envelope_tol=-1.0)])
def test_invalid_hjb_config(kwargs):
    with pytest.raises(ParameterDomainError):
        HjbConfig(**kwargs)


def test_value_function_shape_constant_phi():
    x = np.linspace(-2.0, 2.0, 4001)
    values = value_function_shape(x, np.full(x.size, 2.0))
    expected = (1.0 - np.exp(-2.0 * (x - x[0]))) / 2.0
    np.testing.assert_allclose(values, expected, rtol=1e-5, atol=1e-9)
    assert np.all(np.diff(values) > 0)


def test_export_surface(pension_problem, small_grid, tmp_path):
    surface = solve_riccati_pde(pension_problem, DriftSpec(), phi0_from_utility(DARA, small_grid), grid=small_grid)
    weights = optimal_weights_surface(pension_problem, surface)
    path = export_surface(str(tmp_path / 'hjb_surface.txt'), surface, weights, every=5)
    with open(path) as fh:
        header = fh.readline().strip()
    assert header == '# tau x phi alpha theta1 theta2'
    data = np.loadtxt(path)
    assert data.shape == (3 * small_grid.Nx, 6)
    np.testing.assert_allclose(np.unique(data[:, 0]), [0.0, 0.25, 0.5])


def test_constant_profile_is_preserved(pension_problem, small_grid):
    surface = solve_riccati_pde(pension_problem, DriftSpec(), np.full(small_grid.Nx, 5.0), grid=small_grid)
    assert np.max(np.abs(surface.phi - 5.0)) < 1e-12
    assert surface.newton_iterations == [1] * small_grid.Nt


def test_dara_profile_stays_monotone(pension_surface):
    assert np.all(np.diff(pension_surface.phi[-1]) <= 1e-10)
