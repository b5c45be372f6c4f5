import math

import numpy as np
import pytest
from scipy.special import ndtr

from levypide.analytic_pricers import (EuropeanOption, MarketScenario, bs_delta, bs_price, bs_transformed,
                                       merton_series_price)
from levypide.errors import AssumptionViolation, FamilyMismatchError, ParameterDomainError
from levypide.levy_measures import LevyMeasureSpec


def reference_merton_call(S, K, T, r, sigma, lam, m, delta, J=80):
    """Textbook form: Poisson weights at the intensity lam (1 + k), rates r - lam k + j log(1 + k) / T."""
    k = math.exp(m + 0.5 * delta * delta) - 1.0
    lam_prime = lam * (1.0 + k)
    total = 0.0
    for j in range(J + 1):
        sigma_j = math.sqrt(sigma * sigma + j * delta * delta / T)
        r_j = r - lam * k + j * math.log(1.0 + k) / T
        d1 = (math.log(S / K) + (r_j + 0.5 * sigma_j ** 2) * T) / (sigma_j * math.sqrt(T))
        d2 = d1 - sigma_j * math.sqrt(T)
        call = S * ndtr(d1) - K * math.exp(-r_j * T) * ndtr(d2)
        total += math.exp(-lam_prime * T) * (lam_prime * T) ** j / math.factorial(j) * call
    return total


def test_atm_put_without_rates(put_scenario):
    expected = 100.0 * (2.0 * ndtr(0.115) - 1.0)
    assert bs_price(100.0, put_scenario) == pytest.approx(expected, rel=1e-13)


def test_put_call_parity(put_scenario):
    call_scenario = MarketScenario(sigma=0.23, r=0.1, option=EuropeanOption(100.0, 1.0, 'call'))
    put = MarketScenario(sigma=0.23, r=0.1, option=put_scenario.option)
    S = np.array([80.0, 100.0, 125.0])
    np.testing.assert_allclose(bs_price(S, call_scenario) - bs_price(S, put), S - 100.0 * math.exp(-0.1),
                               rtol=0, atol=1e-11)


def test_price_at_expiry_is_payoff(put_scenario):
    np.testing.assert_allclose(bs_price(np.array([90.0, 110.0]), put_scenario, tau=0.0), [10.0, 0.0])


@pytest.mark.parametrize('kind', ['put', 'call'])
def test_transformed_solution_matches_price(kind):
    scenario = MarketScenario(sigma=0.3, r=0.04, option=EuropeanOption(100.0, 2.0, kind))
    S = np.array([70.0, 100.0, 140.0])
    u = bs_transformed(2.0, np.log(S / 100.0), 100.0, 0.3, 0.04, kind, derivatives=False)
    np.testing.assert_allclose(math.exp(-0.04 * 2.0) * u, bs_price(S, scenario), rtol=1e-12)


@pytest.mark.parametrize('kind', ['put', 'call'])
def test_transformed_derivatives(kind):
    x = np.linspace(-0.5, 0.5, 11)
    h = 1e-4
    u, ux, uxx = bs_transformed(0.7, x, 100.0, 0.23, 0.05, kind)
    up = bs_transformed(0.7, x + h, 100.0, 0.23, 0.05, kind, derivatives=False)
    down = bs_transformed(0.7, x - h, 100.0, 0.23, 0.05, kind, derivatives=False)
    np.testing.assert_allclose(ux, (up - down) / (2 * h), rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(uxx, (up - 2 * u + down) / h ** 2, rtol=1e-4, atol=1e-4)


def test_delta_is_price_slope(call_scenario, put_scenario):
    for scenario in (call_scenario, put_scenario):
        h = 1e-4
        slope = (bs_price(100.0 + h, scenario) - bs_price(100.0 - h, scenario)) / (2 * h)
        assert bs_delta(100.0, scenario) == pytest.approx(slope, abs=1e-7)
    assert bs_delta(100.0, put_scenario) == pytest.approx(bs_delta(100.0, put_scenario.with_rate(0.0)))


def test_invalid_inputs(put_scenario):
    with pytest.raises(ParameterDomainError):
        EuropeanOption(strike=-1.0, maturity=1.0)
    with pytest.raises(ParameterDomainError):
        EuropeanOption(strike=100.0, maturity=1.0, kind='straddle')
    with pytest.raises(ParameterDomainError):
        MarketScenario(sigma=0.0, r=0.0, option=put_scenario.option)
    with pytest.raises(ParameterDomainError):
        bs_price(0.0, put_scenario)


def test_strategy_bound(put_scenario):
    put_scenario.check_strategy_bound(0.5, rho=1.9)
    with pytest.raises(AssumptionViolation):
        put_scenario.check_strategy_bound(0.5, rho=2.0)


def test_merton_series_without_jumps_is_black_scholes(put_scenario):
    result = merton_series_price(100.0, put_scenario, LevyMeasureSpec.null())
    assert result.price == pytest.approx(bs_price(100.0, put_scenario), rel=1e-14)


@pytest.mark.parametrize('S0', [85.2144, 100.0, 112.75])
@pytest.mark.parametrize('r', [0.0, 0.1])
def test_merton_series_matches_textbook_form(S0, r, merton):
    scenario = MarketScenario(sigma=0.23, r=r, option=EuropeanOption(100.0, 1.0, 'call'))
    expected = reference_merton_call(S0, 100.0, 1.0, r, 0.23, 0.1, -0.2, 0.15)
    assert merton_series_price(S0, scenario, merton).price == pytest.approx(expected, rel=1e-10)


def test_merton_series_parity_and_truncation(merton):
    call = MarketScenario(sigma=0.23, r=0.1, option=EuropeanOption(100.0, 1.0, 'call'))
    put = MarketScenario(sigma=0.23, r=0.1, option=EuropeanOption(100.0, 1.0, 'put'))
    c, p = merton_series_price(95.0, call, merton), merton_series_price(95.0, put, merton)
    assert c.price - p.price == pytest.approx(95.0 - 100.0 * math.exp(-0.1), abs=1e-10)
    assert c.terms < 41
    assert merton_series_price(95.0, call, merton, J=80).price == pytest.approx(c.price, rel=1e-13)


def test_jumps_raise_put_prices(put_scenario, merton):
    for S in (85.0, 100.0, 115.0):
        assert merton_series_price(S, put_scenario, merton).price > bs_price(S, put_scenario)


def test_merton_series_needs_merton_measure(put_scenario, vg):
    with pytest.raises(FamilyMismatchError):
        merton_series_price(100.0, put_scenario, vg)
