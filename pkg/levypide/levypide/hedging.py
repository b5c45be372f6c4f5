"""
Variance minimizing hedges for a large trader.

The tracking error of a self-financing strategy a has the variance rate

    v^2 S^2 (V_S - a)^2 + int (V(S + H) - V(S) - a H)^2 nu(dz)
        = A2 a^2 - 2 A1 a + A0,

so the pointwise optimum is a = A1 / A2. For rho > 0 both the feedback
volatility v and the shift H depend on the strategy itself; the optimum
is then a fixed point over a strategy tabulated on a log-price grid.

Value providers supply V(t, S) and dV/dS(t, S) on numpy arrays:

    BlackScholesValue(scenario)   closed form, any S > 0
    SurfaceValue(surface)         a pide_solver Surface, closed form outside [-L, L]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from levypide.analytic_pricers import bs_delta, bs_price
from levypide.errors import ConvergenceError, ParameterDomainError
from levypide.feedback_shift import (ShiftSolveConfig, TradingStrategy, check_shift_positivity, feedback_volatility,
                                     solve_shift_H)
from levypide.levy_measures import DEFAULT_INNER_CUT, quadrature_rule
from levypide.utils.logger import EventLogMixin
from levypide.utils.tables import write_array

HEDGE_TRUNCATION = 4.0
OUTER_DAMPING = 0.5
OUTER_TOL = 1e-9
OUTER_MAX_ITER = 100


class BlackScholesValue:
    def __init__(self, scenario, sigma=None):
        self.scenario = scenario
        self.sigma = sigma

    def _tau(self, t):
        return max(self.scenario.maturity - t, 0.0)

    def value(self, t, S):
        return np.asarray(bs_price(S, self.scenario, tau=self._tau(t), sigma=self.sigma), dtype=float)

    def ds(self, t, S):
        return np.asarray(bs_delta(S, self.scenario, tau=self._tau(t), sigma=self.sigma), dtype=float)


class SurfaceValue:
    """
    V(t, S) read from a Surface: cubic splines in x per time row, linear in
    tau between rows, Black-Scholes beyond the grid. dV/dS by central
    differences with the grid step in x.
    """

    def __init__(self, surface):
        self.surface = surface
        self.scenario = surface.scenario
        self._splines = {}

    def _row(self, j):
        if j not in self._splines:
            self._splines[j] = CubicSpline(self.surface.x, self.surface.values[j])
        return self._splines[j]

    def value(self, t, S):
        surface, scenario = self.surface, self.scenario
        T, M, L = scenario.maturity, surface.grid.M, surface.grid.L
        S = np.asarray(S, dtype=float)
        if np.any(~(S > 0)):
            raise ParameterDomainError("SurfaceValue: S must be > 0")
        tau = min(max(T - t, 0.0), T)
        position = tau / T * M
        j = min(int(math.floor(position)), M - 1)
        theta = position - j
        x = np.log(S / scenario.strike)
        xc = np.clip(x, -L, L)
        u = (1.0 - theta) * self._row(j)(xc) + theta * self._row(j + 1)(xc)
        inside = np.abs(x) <= L
        if np.all(inside):
            return math.exp(-scenario.r * tau) * u
        outside = np.asarray(bs_price(S, scenario, tau=tau), dtype=float)
        return np.where(inside, math.exp(-scenario.r * tau) * u, outside)

    def ds(self, t, S):
        S = np.asarray(S, dtype=float)
        h = self.surface.grid.dx
        return (self.value(t, S * math.exp(h)) - self.value(t, S * math.exp(-h))) / (S * 2.0 * math.sinh(h))


@dataclass
class HedgeContext:
    provider: object
    scenario: object
    spec: object
    rho: float = 0.0
    truncation: float = HEDGE_TRUNCATION
    inner_cut: float = DEFAULT_INNER_CUT
    shift_config: ShiftSolveConfig = field(default_factory=ShiftSolveConfig)
    rule: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.rho < 0:
            raise ParameterDomainError(f"rho must be >= 0, got {self.rho}")
        self.rule = quadrature_rule(self.spec, truncation=self.truncation, inner_cut=self.inner_cut)

    @property
    def has_jumps(self):
        return self.rule.w.size > 0

    def lipschitz_constant(self, t, S_grid):
        """Largest divided difference of V on an increasing S grid."""
        S = np.asarray(S_grid, dtype=float)
        V = self.provider.value(t, S)
        slopes = np.abs(np.diff(V) / np.diff(S))
        if not np.all(np.isfinite(slopes)):
            raise ParameterDomainError(f"value surface is not Lipschitz on the grid at t={t}")
        return float(np.max(slopes))


def shift_H0(z, S):
    """Shift without a large trader, H0 = S (e^z - 1)."""
    return np.asarray(S, dtype=float) * np.expm1(np.asarray(z, dtype=float))


def _moments(ctx, t, S, strategy=None):
    S = np.atleast_1d(np.asarray(S, dtype=float))
    if np.any(~(S > 0)):
        raise ParameterDomainError("hedging: S must be > 0")
    sigma = ctx.scenario.sigma
    V = ctx.provider.value(t, S)
    VS = ctx.provider.ds(t, S)
    feedback = strategy is not None and ctx.rho > 0
    if feedback:
        x = np.log(S / ctx.scenario.strike)
        v2 = np.asarray(feedback_volatility(ctx.scenario.maturity - t, x, strategy, ctx.rho, sigma)) ** 2
    else:
        v2 = sigma * sigma
    diffusion = v2 * S * S
    A2, A1, A0 = diffusion, diffusion * VS, diffusion * VS * VS
    if ctx.has_jumps:
        z, w = ctx.rule.all_z, ctx.rule.all_w
        if feedback:
            H = solve_shift_H(t, z[None, :], S[:, None], strategy, ctx.rho, config=ctx.shift_config)
        else:
            H = shift_H0(z[None, :], S[:, None])
        dV = ctx.provider.value(t, S[:, None] + H) - V[:, None]
        A2 = A2 + (H * H) @ w
        A1 = A1 + (dV * H) @ w
        A0 = A0 + (dV * dV) @ w
    return A0, A1, A2


def _scalar(value, like):
    return float(value[0]) if np.ndim(like) == 0 else value


def objective_moments(ctx, t, S, strategy=None):
    """
    Coefficients (A0, A1, A2) of the variance rate A2 a^2 - 2 A1 a + A0.

    :param strategy: TradingStrategy the large trader follows; it only
        matters for rho > 0 and defaults to holding nothing
    """
    A0, A1, A2 = _moments(ctx, t, S, strategy)
    return _scalar(A0, S), _scalar(A1, S), _scalar(A2, S)


def pointwise_objective(ctx, t, S, a, strategy=None):
    A0, A1, A2 = objective_moments(ctx, t, S, strategy)
    return A2 * a * a - 2.0 * A1 * a + A0


def phi0(ctx, t, S):
    """Optimal holdings without feedback, beta0 * (sigma^2 S^2 V_S + int H0 dV nu)."""
    if not ctx.has_jumps:
        return _scalar(ctx.provider.ds(t, np.atleast_1d(np.asarray(S, dtype=float))), S)
    _, A1, A2 = _moments(ctx, t, S)
    return _scalar(A1 / A2, S)


def shift_H1(ctx, t, z, S):
    """First-order shift coefficient H1 = S (phi0(t, S e^z) - phi0(t, S))."""
    z = np.asarray(z, dtype=float)
    S = float(S)
    shifted = phi0(ctx, t, (S * np.exp(z)).ravel()).reshape(z.shape)
    return S * (shifted - phi0(ctx, t, S))


def _strategy_grid(center, half_width, nodes):
    return center + np.linspace(-half_width, half_width, nodes)


def fixed_point_strategy(ctx, t, center=0.0, half_width=None, nodes=181, damping=OUTER_DAMPING, tol=OUTER_TOL,
                         max_iter=OUTER_MAX_ITER, trace=None):
    """
    Optimal strategy for rho > 0 on the log-price grid center +- half_width:
    damped Picard iteration phi <- (1 - damping) phi + damping A1(phi)/A2(phi).

    The grid defaults to half_width = truncation + 0.5 so that S e^z stays
    on it for every jump node. Each sweep requires e^z_min > rho * osc(phi)
    over the grid values and raises AssumptionViolation otherwise.

    :param trace: optional list, receives the sup-norm update of every sweep
    :return: TradingStrategy through the converged grid values
    """
    K, T = ctx.scenario.strike, ctx.scenario.maturity
    if half_width is None:
        half_width = ctx.truncation + 0.5
    x = _strategy_grid(center, half_width, nodes)
    S = K * np.exp(x)
    values = np.atleast_1d(phi0(ctx, t, S))
    strategy = TradingStrategy.from_samples(x, values, strike=K, maturity=T, name='fixed_point')
    if ctx.rho == 0 or not ctx.has_jumps:
        return strategy
    z_min = float(np.min(ctx.rule.all_z))
    change = math.inf
    for _ in range(max_iter):
        check_shift_positivity(z_min, float(np.ptp(values)), ctx.rho)
        _, A1, A2 = _moments(ctx, t, S, strategy)
        updated = (1.0 - damping) * values + damping * A1 / A2
        change = float(np.max(np.abs(updated - values)))
        if trace is not None:
            trace.append(change)
        values = updated
        strategy = TradingStrategy.from_samples(x, values, strike=K, maturity=T, name='fixed_point')
        if change <= tol:
            return strategy
    raise ConvergenceError(f"hedging fixed point did not converge in {max_iter} sweeps at t={t}",
                           last_residual=change, iterations=max_iter)


def optimal_strategy_pointwise(ctx, t, S, strategy=None):
    """
    Minimizer A1/A2 of the variance rate at (t, S).

    Without jumps the result is V_S for every rho. With rho > 0 and no
    strategy given, the self-consistent strategy is computed first on a grid
    centred at ln(S/K).
    """
    S = float(S)
    if not ctx.has_jumps:
        return float(ctx.provider.ds(t, np.array([S]))[0])
    if ctx.rho > 0 and strategy is None:
        strategy = fixed_point_strategy(ctx, t, center=math.log(S / ctx.scenario.strike))
    _, A1, A2 = objective_moments(ctx, t, S, strategy)
    return A1 / A2


def strategy_first_order(ctx, t, S, h=1e-4):
    """
    phi0 + rho phi1 with

        phi1  = beta0 [2 sigma^2 S^3 V_S phi0_S + int (V(S e^z) - V(S) + V_S(S e^z) H0) H1 nu]
                + beta1 [sigma^2 S^2 V_S + int (V(S e^z) - V(S)) H0 nu]
        beta1 = -beta0^2 [2 sigma^2 S^3 phi0_S + 2 int H0 H1 nu]

    :param h: log-price step of the central difference for S dphi0/dS
    """
    S = float(S)
    base = float(phi0(ctx, t, S))
    if ctx.rho == 0:
        return base
    provider, sigma2 = ctx.provider, ctx.scenario.sigma ** 2
    s_dphi0 = float((phi0(ctx, t, S * math.exp(h)) - phi0(ctx, t, S * math.exp(-h))) / (2.0 * h))
    VS = float(provider.ds(t, np.array([S]))[0])
    diffusion = sigma2 * S * S
    if not ctx.has_jumps:
        beta0 = 1.0 / diffusion
        N0 = diffusion * VS
        N1 = 2.0 * diffusion * s_dphi0 * VS
        beta1 = -beta0 ** 2 * 2.0 * diffusion * s_dphi0
        return base + ctx.rho * (beta0 * N1 + beta1 * N0)

    z, w = ctx.rule.all_z, ctx.rule.all_w
    Sz = S * np.exp(z)
    H0 = shift_H0(z, S)
    H1 = shift_H1(ctx, t, z, S)
    V = float(provider.value(t, np.array([S]))[0])
    dV = provider.value(t, Sz) - V
    VSz = provider.ds(t, Sz)

    beta0 = 1.0 / (diffusion + (H0 * H0) @ w)
    N0 = diffusion * VS + (dV * H0) @ w
    N1 = 2.0 * diffusion * s_dphi0 * VS + ((dV + VSz * H0) * H1) @ w
    beta1 = -beta0 ** 2 * (2.0 * diffusion * s_dphi0 + 2.0 * (H0 * H1) @ w)
    return base + ctx.rho * float(beta0 * N1 + beta1 * N0)


def constrained_strategy(ctx, t, S_grid, cap, strategy=None):
    """
    Heuristic for |S dphi/dS| <= cap: optimal holdings on an increasing S
    grid with their log-price slopes clamped, walking outward from the
    middle node. Not the minimizer of the constrained problem.

    :return: array of holdings on S_grid
    """
    if not cap > 0:
        raise ParameterDomainError(f"slope cap must be > 0, got {cap}")
    S = np.asarray(S_grid, dtype=float)
    if S.ndim != 1 or S.size < 2 or np.any(np.diff(S) <= 0):
        raise ParameterDomainError("constrained_strategy: S grid must be increasing with at least 2 points")
    _, A1, A2 = _moments(ctx, t, S, strategy)
    raw = A1 / A2
    y = np.log(S)
    clamped = raw.copy()
    middle = S.size // 2
    for i in range(middle + 1, S.size):
        step = cap * (y[i] - y[i - 1])
        clamped[i] = clamped[i - 1] + np.clip(raw[i] - clamped[i - 1], -step, step)
    for i in range(middle - 1, -1, -1):
        step = cap * (y[i + 1] - y[i])
        clamped[i] = clamped[i + 1] + np.clip(raw[i] - clamped[i + 1], -step, step)
    return clamped


class HedgeSolver(EventLogMixin):
    def __init__(self, ctx, logger=None, log_events=True):
        """
        :param ctx: HedgeContext
        :param logger: Optional logger, stderr prints when omitted
        """
        self.ctx = ctx
        self.logger = logger
        self.log_events = log_events
        self._strategies = {}

    def strategy_at(self, t, spots):
        """Fixed point strategy for time t on a grid covering all spots."""
        if t not in self._strategies:
            x = np.log(np.asarray(spots, dtype=float) / self.ctx.scenario.strike)
            center = 0.5 * (float(np.min(x)) + float(np.max(x)))
            half_width = self.ctx.truncation + 0.5 + 0.5 * (float(np.max(x)) - float(np.min(x)))
            trace = []
            self._strategies[t] = fixed_point_strategy(self.ctx, t, center=center, half_width=half_width,
                                                       trace=trace)
            self.log('debug', f"t={t}: fixed point converged after {len(trace)} sweeps")
        return self._strategies[t]

    def hedge_rows(self, times, spots):
        ctx = self.ctx
        spots = sorted(float(S) for S in spots)
        self.log('info', f"Hedge table: measure={ctx.spec.family}, rho={ctx.rho}, "
                         f"{len(times)} times x {len(spots)} spots")
        rows = []
        for t in times:
            self.log('debug', f"t={t}: Lipschitz constant of V {ctx.lipschitz_constant(t, spots):.6g}")
            strategy = self.strategy_at(t, spots) if ctx.rho > 0 and ctx.has_jumps else None
            for S in spots:
                rows.append((float(t), S, float(phi0(ctx, t, S)), strategy_first_order(ctx, t, S),
                             optimal_strategy_pointwise(ctx, t, S, strategy)))
        return rows

    def export(self, path, times, spots):
        return write_array(path, ('t', 'S', 'phi0', 'phi_first_order', 'phi_fixed_point'),
                           self.hedge_rows(times, spots))
