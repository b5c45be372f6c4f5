"""
Large trader feedback: shift functions, feedback volatility and the drift
correction delta(tau, x).

A large trader holding phi(t, S) shares moves the price when it trades. A
jump of size z in the fundamental value then shifts the asset price by H
and the log-price by xi, both defined implicitly:

    H  = rho S (phi(t, S + H) - phi(t, S)) + S (e^z - 1)
    e^xi = e^z + rho (psi(tau, x + xi) - psi(tau, x))

with psi(tau, x) = phi(T - tau, K e^x). Both are solved by fixed-point
iteration, contracting whenever rho * L < 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import ndtr

from levypide.errors import AssumptionViolation, ConvergenceError, ParameterDomainError
from levypide.levy_measures import DEFAULT_INNER_CUT, DEFAULT_TRUNCATION, compensated_integral

XI_MODES = ('exact', 'first_order', 'no_ezfactor')
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class TradingStrategy:
    """
    Prescribed large trader strategy in transformed variables.

    psi(tau, x) and dpsi(tau, x) = d psi / dx must accept numpy arrays in x.
    holder_bound is L = sup |S d phi/dS| = sup |d psi/dx|.
    """
    psi: Callable
    holder_bound: float
    holder_exponent: float = 1.0
    dpsi: Optional[Callable] = None
    strike: float = 100.0
    maturity: float = 1.0
    time_dependent: bool = False
    name: str = 'custom'

    def __post_init__(self):
        if not (self.holder_bound >= 0 and math.isfinite(self.holder_bound)):
            raise ParameterDomainError(f"strategy bound L must be finite and >= 0, got {self.holder_bound}")
        if not 0 < self.holder_exponent <= 1:
            raise ParameterDomainError(f"Holder exponent must lie in (0, 1], got {self.holder_exponent}")

    def __call__(self, tau, x):
        return self.psi(tau, np.asarray(x, dtype=float))

    def phi(self, t, S):
        """Holdings in original variables, phi(t, S) = psi(T - t, ln(S/K))."""
        S = np.asarray(S, dtype=float)
        if np.any(~(S > 0)):
            raise ParameterDomainError("strategy evaluated at a non-positive price")
        return self.psi(self.maturity - t, np.log(S / self.strike))

    def s_dphi_ds(self, tau, x):
        """S dphi/dS, i.e. dpsi/dx; central differences in S when no derivative is supplied."""
        x = np.asarray(x, dtype=float)
        if self.dpsi is not None:
            return self.dpsi(tau, x)
        S = self.strike * np.exp(x)
        h = 1e-5 * S
        up = self.psi(tau, np.log((S + h) / self.strike))
        down = self.psi(tau, np.log((S - h) / self.strike))
        return S * (up - down) / (2.0 * h)

    def check_bound(self, rho):
        if rho * self.holder_bound >= 1.0:
            raise AssumptionViolation(
                f"rho*L = {rho * self.holder_bound:.6g} must be < 1 for strategy '{self.name}'")

    @classmethod
    def from_samples(cls, x_nodes, values, strike=100.0, maturity=1.0, name='sampled'):
        """
        Cubic spline strategy through (x_nodes, values), held constant
        outside the node range.
        """
        x_nodes = np.asarray(x_nodes, dtype=float)
        spline = CubicSpline(x_nodes, np.asarray(values, dtype=float))
        slope = spline.derivative()
        lo, hi = x_nodes[0], x_nodes[-1]

        def psi(tau, x):
            return spline(np.clip(x, lo, hi))

        def dpsi(tau, x):
            x = np.asarray(x, dtype=float)
            return np.where((x >= lo) & (x <= hi), slope(np.clip(x, lo, hi)), 0.0)

        fine = np.linspace(lo, hi, 8 * x_nodes.size)
        bound = float(np.max(np.abs(slope(fine))))
        return cls(psi=psi, holder_bound=bound, dpsi=dpsi, strike=strike, maturity=maturity, name=name)


@dataclass(frozen=True)
class ShiftSolveConfig:
    max_iter: int = 200
    tol: float = 1e-12
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterDomainError(f"tolerance must be > 0, got {self.tol}")
        if not 0 < self.damping <= 1:
            raise ParameterDomainError(f"damping must lie in (0, 1], got {self.damping}")
        if self.max_iter < 1:
            raise ParameterDomainError(f"max_iter must be >= 1, got {self.max_iter}")


def constant_strategy(value, strike=100.0, maturity=1.0):
    return TradingStrategy(psi=lambda tau, x: np.full_like(np.asarray(x, dtype=float), value),
                           dpsi=lambda tau, x: np.zeros_like(np.asarray(x, dtype=float)),
                           holder_bound=0.0, strike=strike, maturity=maturity, name='constant')


def linear_strategy(slope, strike=100.0, maturity=1.0):
    return TradingStrategy(psi=lambda tau, x: slope * np.asarray(x, dtype=float),
                           dpsi=lambda tau, x: np.full_like(np.asarray(x, dtype=float), slope),
                           holder_bound=abs(slope), strike=strike, maturity=maturity, name='linear')


def tanh_strategy(amplitude, width=1.0, strike=100.0, maturity=1.0):
    def psi(tau, x):
        return amplitude * np.tanh(np.asarray(x, dtype=float) / width)

    def dpsi(tau, x):
        return amplitude / width / np.cosh(np.asarray(x, dtype=float) / width) ** 2

    return TradingStrategy(psi=psi, dpsi=dpsi, holder_bound=abs(amplitude) / width,
                           strike=strike, maturity=maturity, name='tanh')


def normal_cdf_strategy(amplitude, width=1.0, strike=100.0, maturity=1.0):
    def psi(tau, x):
        return amplitude * ndtr(np.asarray(x, dtype=float) / width)

    def dpsi(tau, x):
        y = np.asarray(x, dtype=float) / width
        return amplitude / width * _INV_SQRT_2PI * np.exp(-0.5 * y * y)

    return TradingStrategy(psi=psi, dpsi=dpsi, holder_bound=abs(amplitude) * _INV_SQRT_2PI / width,
                           strike=strike, maturity=maturity, name='normal_cdf')


def bs_delta_strategy(scenario, scale=1.0, tau_floor=0.25):
    """
    Call-delta shaped holdings scale * N(d1) with time to maturity floored at
    tau_floor, which keeps the bound L = scale / (sigma sqrt(2 pi tau_floor)).
    """
    sigma, r = scenario.sigma, scenario.r

    def _d1(tau, x):
        tau = max(tau, tau_floor)
        return (np.asarray(x, dtype=float) + (r + 0.5 * sigma * sigma) * tau) / (sigma * math.sqrt(tau)), tau

    def psi(tau, x):
        d1, _ = _d1(tau, x)
        return scale * ndtr(d1)

    def dpsi(tau, x):
        d1, tau = _d1(tau, x)
        return scale * _INV_SQRT_2PI * np.exp(-0.5 * d1 * d1) / (sigma * math.sqrt(tau))

    bound = abs(scale) * _INV_SQRT_2PI / (sigma * math.sqrt(tau_floor))
    return TradingStrategy(psi=psi, dpsi=dpsi, holder_bound=bound, strike=scenario.strike,
                           maturity=scenario.maturity, time_dependent=True, name='bs_delta')


def _as_output(value, *inputs):
    if all(np.ndim(item) == 0 for item in inputs):
        return float(value)
    return value


def check_shift_positivity(z_min, oscillation, rho):
    """
    e^z_min > rho * osc(phi) keeps S + H > 0 for every jump z >= z_min,
    whatever the price and the strategy values involved.
    """
    floor = math.exp(z_min)
    if not floor > rho * oscillation:
        raise AssumptionViolation(
            f"e^z = {floor:.6g} at the smallest jump z = {z_min:.6g} does not exceed "
            f"rho * osc(phi) = {rho * oscillation:.6g}, shifted prices can leave the positive half-line",
            node=float(z_min))


def solve_shift_H(t, z, S, strategy, rho, config=None, trace=None):
    """
    Fixed point of H -> S(e^z - 1) + rho S (phi(t, S + H) - phi(t, S)).

    H is in currency, so the iteration stops once the sup-norm residual is
    at most config.tol * max(1, max S): tol is relative to the price level,
    absolute for prices up to 1.

    The shifted price S + H = S (e^z + rho (phi(t, S + H) - phi(t, S))) must
    stay positive. It does whenever e^z > rho * osc(phi); a path leaving the
    positive half-line raises AssumptionViolation.

    :param trace: optional list, receives the fixed-point residual of every iteration
    :return: H, broadcast over z and S
    """
    config = config or ShiftSolveConfig()
    strategy.check_bound(rho)
    z_arr, S_arr = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(S, dtype=float))
    if np.any(~(S_arr > 0)):
        raise ParameterDomainError("solve_shift_H: S must be > 0")
    base = S_arr * np.expm1(z_arr)
    if rho == 0:
        return _as_output(base, z, S)
    phi_S = strategy.phi(t, S_arr)
    scale = max(1.0, float(np.max(S_arr)))
    H = base.copy()
    residual = math.inf
    for _ in range(config.max_iter):
        target = S_arr + H
        if np.any(~(target > 0)):
            bad = int(np.argmin(target.ravel()))
            raise AssumptionViolation(
                f"shifted price S + H is not positive at S={S_arr.ravel()[bad]:.6g}, z={z_arr.ravel()[bad]:.6g}: "
                f"need e^z > rho * osc(phi)", node=float(z_arr.ravel()[bad]))
        mapped = base + rho * S_arr * (strategy.phi(t, target) - phi_S)
        residual = float(np.max(np.abs(mapped - H)))
        if trace is not None:
            trace.append(residual)
        if residual <= config.tol * scale:
            return _as_output(mapped, z, S)
        H = (1.0 - config.damping) * H + config.damping * mapped
    raise ConvergenceError(f"solve_shift_H: no convergence in {config.max_iter} iterations",
                           last_residual=residual, iterations=config.max_iter)


def shift_H_first_order(t, z, S, strategy, rho):
    """H ~ S(e^z - 1) + rho S (phi(t, S e^z) - phi(t, S))."""
    z_arr, S_arr = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(S, dtype=float))
    base = S_arr * np.expm1(z_arr)
    if rho == 0:
        return _as_output(base, z, S)
    value = base + rho * S_arr * (strategy.phi(t, S_arr * np.exp(z_arr)) - strategy.phi(t, S_arr))
    return _as_output(value, z, S)


def solve_xi(tau, x, z, strategy, rho, config=None, trace=None):
    """
    Log-price shift: fixed point of xi -> log(e^z + rho (psi(tau, x + xi) - psi(tau, x))).
    """
    config = config or ShiftSolveConfig()
    strategy.check_bound(rho)
    x_arr, z_arr = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
    if rho == 0:
        return _as_output(z_arr.copy(), x, z)
    ez = np.exp(z_arr)
    psi_x = strategy.psi(tau, x_arr)
    xi = z_arr.copy()
    residual = math.inf
    for _ in range(config.max_iter):
        argument = ez + rho * (strategy.psi(tau, x_arr + xi) - psi_x)
        if np.any(~(argument > 0)):
            raise ParameterDomainError(
                "solve_xi: e^z + rho*(psi(x+xi) - psi(x)) is not positive, the shift is undefined")
        residual = float(np.max(np.abs(np.exp(xi) - argument)))
        if trace is not None:
            trace.append(residual)
        if residual <= config.tol:
            return _as_output(xi, x, z)
        xi = (1.0 - config.damping) * xi + config.damping * np.log(argument)
    raise ConvergenceError(f"solve_xi: no convergence in {config.max_iter} iterations",
                           last_residual=residual, iterations=config.max_iter)


def xi_first_order(tau, x, z, strategy, rho, ez_factor=True):
    """
    xi ~ z + rho e^{-z} (psi(tau, x + z) - psi(tau, x)); ez_factor=False
    drops the e^{-z} factor.
    """
    x_arr, z_arr = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
    if rho == 0:
        return _as_output(z_arr.copy(), x, z)
    increment = strategy.psi(tau, x_arr + z_arr) - strategy.psi(tau, x_arr)
    if ez_factor:
        increment = np.exp(-z_arr) * increment
    return _as_output(z_arr + rho * increment, x, z)


def normalize_xi_mode(mode):
    mode = str(mode).strip().lower().replace('-', '_')
    if mode not in XI_MODES:
        raise ParameterDomainError(f"xi mode must be one of {XI_MODES}, got {mode!r}")
    return mode


def xi_provider(strategy, rho, mode='first_order', config=None):
    """Returns xi(tau, x, z) for the chosen shift approximation."""
    mode = normalize_xi_mode(mode)
    if mode == 'exact':
        return lambda tau, x, z: solve_xi(tau, x, z, strategy, rho, config=config)
    ez_factor = mode == 'first_order'
    return lambda tau, x, z: xi_first_order(tau, x, z, strategy, rho, ez_factor=ez_factor)


def feedback_volatility(tau, x, strategy, rho, sigma):
    """
    v = sigma / (1 - rho S dphi/dS), evaluated at tau = T - t, x = ln(S/K).
    """
    slope = np.asarray(strategy.s_dphi_ds(tau, x), dtype=float)
    denominator = 1.0 - rho * slope
    if np.any(~(denominator > 0)):
        bad = int(np.argmin(denominator.ravel())) if denominator.ndim else 0
        node = float(np.ravel(np.broadcast_to(np.asarray(x, dtype=float), denominator.shape))[bad])
        raise AssumptionViolation(f"feedback denominator 1 - rho*S*dphi/dS <= 0 at x={node:.6g}", node=node)
    value = sigma / denominator
    return float(value) if value.ndim == 0 else value


def drift_correction_delta(tau, x, strategy, rho, spec, xi_mode='first_order',
                           truncation=DEFAULT_TRUNCATION, inner_cut=DEFAULT_INNER_CUT):
    """delta(tau, x) = int (e^xi - 1 - xi) nu(dz) at a single node x."""
    xi_of = xi_provider(strategy, rho, xi_mode)

    def integrand(z):
        xi = np.asarray(xi_of(tau, x, z), dtype=float)
        return np.expm1(xi) - xi

    return compensated_integral(spec, integrand, truncation=truncation, inner_cut=inner_cut).value


def fit_xi_bound(tau, x_grid, z_grid, strategy, rho, xi_mode='first_order'):
    """
    Smallest C0 with |xi| <= C0 |z|^omega (1 + e^{|z|}) on the grid, omega the
    Holder exponent of the strategy.
    """
    x_mesh, z_mesh = np.meshgrid(np.asarray(x_grid, dtype=float), np.asarray(z_grid, dtype=float))
    if np.any(z_mesh == 0):
        raise ParameterDomainError("fit_xi_bound: z grid must exclude 0")
    xi = np.asarray(xi_provider(strategy, rho, xi_mode)(tau, x_mesh, z_mesh), dtype=float)
    az = np.abs(z_mesh)
    return float(np.max(np.abs(xi) / (az ** strategy.holder_exponent * (1.0 + np.exp(az)))))
