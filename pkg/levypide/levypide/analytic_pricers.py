"""
Closed-form European option prices.

Black-Scholes prices and deltas, the transformed Black-Scholes solution
u^BS(tau, x) with its x-derivatives (the background the PIDE solver shifts
by), and the Merton jump-diffusion series. All functions accept numpy
arrays for spot or log-moneyness.

Transformation used throughout the package:

    tau = T - t,  x = ln(S/K),  V(t, S) = exp(-r tau) u(tau, x)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from levypide.errors import AssumptionViolation, ParameterDomainError
from levypide.levy_measures import require_family

OPTION_KINDS = ('call', 'put')
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class EuropeanOption:
    strike: float
    maturity: float
    kind: str = 'put'

    def __post_init__(self):
        if not self.strike > 0:
            raise ParameterDomainError(f"strike must be > 0, got {self.strike}")
        if not self.maturity > 0:
            raise ParameterDomainError(f"maturity must be > 0, got {self.maturity}")
        if self.kind not in OPTION_KINDS:
            raise ParameterDomainError(f"option kind must be one of {OPTION_KINDS}, got {self.kind!r}")

    def payoff(self, S):
        S = np.asarray(S, dtype=float)
        if self.kind == 'call':
            return np.maximum(S - self.strike, 0.0)
        return np.maximum(self.strike - S, 0.0)


@dataclass(frozen=True)
class MarketScenario:
    sigma: float
    r: float
    option: EuropeanOption
    rho_liquidity: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterDomainError(f"sigma must be > 0, got {self.sigma}")
        if self.r < 0:
            raise ParameterDomainError(f"r must be >= 0, got {self.r}")
        if self.rho_liquidity < 0:
            raise ParameterDomainError(f"rho_liquidity must be >= 0, got {self.rho_liquidity}")

    @property
    def strike(self):
        return self.option.strike

    @property
    def maturity(self):
        return self.option.maturity

    def check_strategy_bound(self, holder_bound, rho=None):
        """Raise AssumptionViolation unless rho * L < 1."""
        rho = self.rho_liquidity if rho is None else rho
        if rho * holder_bound >= 1.0:
            raise AssumptionViolation(f"rho*L = {rho * holder_bound:.6g} must be < 1 "
                                      f"(rho={rho}, L={holder_bound})")

    def with_rate(self, r):
        return MarketScenario(sigma=self.sigma, r=r, option=self.option, rho_liquidity=self.rho_liquidity)


class SeriesResult(NamedTuple):
    price: float
    last_term: float
    terms: int


def _normal_pdf(d):
    return _INV_SQRT_2PI * np.exp(-0.5 * d * d)


def _check_spot(S):
    S = np.asarray(S, dtype=float)
    if np.any(~(S > 0)):
        raise ParameterDomainError("spot price must be > 0")
    return S


def _bs_call(S, K, tau, sigma, r):
    """Discounted Black-Scholes call from the transformed solution."""
    x = np.log(S / K)
    if tau == 0:
        return np.maximum(S - K, 0.0)
    s = sigma * math.sqrt(tau)
    d1 = (x + (r + 0.5 * sigma * sigma) * tau) / s
    d2 = d1 - s
    u = K * np.exp(x + r * tau) * ndtr(d1) - K * ndtr(d2)
    return math.exp(-r * tau) * u


def bs_transformed(tau, x, strike, sigma, r, kind='put', derivatives=True):
    """
    u^BS(tau, x) and its first two x-derivatives.

    At tau = 0 the payoff in x is returned, with one-sided derivatives of
    the kink taken from the exercise side.

    :param derivatives: return only u when False
    :return: tuple (u, u_x, u_xx) of arrays shaped like x
    """
    x = np.asarray(x, dtype=float)
    K = strike
    if tau <= 0:
        ex = np.exp(x)
        if kind == 'call':
            inside = x > 0
            u = np.where(inside, K * (ex - 1.0), 0.0)
            du = np.where(inside, K * ex, 0.0)
        else:
            inside = x < 0
            u = np.where(inside, K * (1.0 - ex), 0.0)
            du = np.where(inside, -K * ex, 0.0)
        return (u, du, du.copy()) if derivatives else u
    s = sigma * math.sqrt(tau)
    d1 = (x + (r + 0.5 * sigma * sigma) * tau) / s
    d2 = d1 - s
    forward = K * np.exp(x + r * tau)
    if kind == 'call':
        first = forward * ndtr(d1)
        u = first - K * ndtr(d2)
    else:
        first = -forward * ndtr(-d1)
        u = K * ndtr(-d2) + first
    if not derivatives:
        return u
    return u, first, first + forward * _normal_pdf(d1) / s


def bs_price(S, scenario, tau=None, sigma=None):
    """
    Black-Scholes price V(t, S).

    :param S: spot(s), > 0
    :param scenario: MarketScenario (strike, maturity, kind, r, sigma)
    :param tau: time to maturity, defaults to the option maturity
    :param sigma: volatility override, e.g. an effective feedback volatility
    :return: price, float or array like S
    """
    S = _check_spot(S)
    tau = scenario.maturity if tau is None else float(tau)
    sigma = scenario.sigma if sigma is None else float(sigma)
    K, r = scenario.strike, scenario.r
    call = _bs_call(S, K, tau, sigma, r)
    price = call if scenario.option.kind == 'call' else call - S + K * math.exp(-r * tau)
    return float(price) if np.ndim(price) == 0 else price


def bs_delta(S, scenario, tau=None, sigma=None):
    S = _check_spot(S)
    tau = scenario.maturity if tau is None else float(tau)
    sigma = scenario.sigma if sigma is None else float(sigma)
    if tau == 0:
        call_delta = (S > scenario.strike).astype(float)
    else:
        s = sigma * math.sqrt(tau)
        d1 = (np.log(S / scenario.strike) + (scenario.r + 0.5 * sigma * sigma) * tau) / s
        call_delta = ndtr(d1)
    delta = call_delta if scenario.option.kind == 'call' else call_delta - 1.0
    return float(delta) if np.ndim(delta) == 0 else delta


def merton_series_price(S0, scenario, merton, J=40):
    """
    Merton jump-diffusion price as a Poisson-weighted sum of Black-Scholes
    prices:

        C = sum_j P_j e^{(r_j - r)T} C_BS(S0 e^{j delta^2/2}, K, T, sigma_j, r_j)

    with P_j = e^{-lam T}(lam T)^j / j!, r_j = r - lam k + j m / T,
    sigma_j^2 = sigma^2 + j delta^2 / T and k = e^{m + delta^2/2} - 1. The
    spot adjustment e^{j delta^2/2} makes each term the conditional
    expectation given j jumps. Puts follow from parity.

    :return: SeriesResult(price, last_term, terms)
    """
    require_family(merton, 'merton')
    if J < 0:
        raise ParameterDomainError(f"series truncation J must be >= 0, got {J}")
    S0 = float(_check_spot(S0))
    K, T, r, sigma = scenario.strike, scenario.maturity, scenario.r, scenario.sigma
    lam, m, delta = merton.lam, merton.m, merton.delta

    if lam == 0.0:
        call, last, terms = _bs_call(S0, K, T, sigma, r), 0.0, 1
    else:
        k = math.expm1(m + 0.5 * delta * delta)
        lam_t = lam * T
        call, last, terms = 0.0, 0.0, 0
        for j in range(J + 1):
            weight = math.exp(-lam_t + j * math.log(lam_t) - math.lgamma(j + 1))
            r_j = r - lam * k + j * m / T
            sigma_j = sigma if j == 0 else math.sqrt(sigma * sigma + j * delta * delta / T)
            spot_j = S0 * math.exp(0.5 * j * delta * delta)
            term = weight * math.exp((r_j - r) * T) * float(_bs_call(spot_j, K, T, sigma_j, r_j))
            call += term
            last, terms = abs(term), j + 1
            if j > lam_t and abs(term) < 1e-14 * abs(call):
                break
    call = float(call)
    price = call if scenario.option.kind == 'call' else call - S0 + K * math.exp(-r * T)
    return SeriesResult(price=price, last_term=last, terms=terms)
