"""
Implicit finite difference solver for option pricing PIDEs under Levy jumps
with large trader feedback.

Overview:
    In tau = T - t, x = ln(S/K) and V = exp(-r tau) u the price solves

        u_tau = s2/2 u_xx + (r - s2/2 + s delta) u_x + f(u),
        f(u)  = int (u(x + xi) - u - xi u_x) nu(dz),

    where s2 = sigma^2 for the linear equation and
    s2 = sigma^2 / (1 - rho psi_x)^2 for the feedback equation, delta is the
    drift correction int (e^xi - 1 - xi) nu(dz) and s = -1 (default) or +1.

    By default the solver marches U = u - u^BS from U(0, .) = 0 with U = 0
    outside [-L, L]; the known background u^BS enters through a source term.
    With shift=False it marches u itself from the payoff with u^BS as
    Dirichlet and off-grid data.

Scheme:
    Implicit Euler for the local part (diffusion, convection, the jump
    intensity and compensation terms, small jumps as extra diffusion), one
    tridiagonal solve per step. The interpolation sum int u(x + xi) nu(dz)
    is explicit at the previous level.

Usage:
    grid = PideGrid(L=4.0, N=400, M=200)
    surface = solve_linear_pide(scenario, merton, None, 0.0, grid)
    price_from_surface(surface, [90.0, 100.0, 110.0])
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from levypide.analytic_pricers import bs_transformed
from levypide.errors import AssumptionViolation, ParameterDomainError, SolverBreakdown
from levypide.feedback_shift import ShiftSolveConfig, constant_strategy, normalize_xi_mode, xi_provider
from levypide.levy_measures import DEFAULT_TRUNCATION, quadrature_rule
from levypide.utils.logger import EventLogMixin
from levypide.utils.tables import write_array

DELTA_SIGNS = ('minus', 'plus')


@dataclass(frozen=True)
class PideGrid:
    L: float = 4.0
    N: int = 400
    M: int = 200

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterDomainError(f"grid half-width L must be > 0, got {self.L}")
        if self.N < 16 or self.N % 2:
            raise ParameterDomainError(f"grid N must be even and >= 16, got {self.N}")
        if self.M < 2:
            raise ParameterDomainError(f"grid M must be >= 2, got {self.M}")

    @property
    def dx(self):
        return 2.0 * self.L / self.N

    @property
    def x(self):
        # integer offsets keep the node x = 0 exact
        return self.dx * (np.arange(self.N + 1) - self.N // 2)

    def dt(self, maturity):
        return maturity / self.M

    def taus(self, maturity):
        return maturity * np.arange(self.M + 1) / self.M


@dataclass(frozen=True)
class PideConfig:
    delta_sign: str = 'minus'
    xi_mode: str = 'first_order'
    truncation: float = DEFAULT_TRUNCATION
    inner_cut: Optional[float] = None
    nodes_per_panel: int = 8
    panel_width: float = 0.25
    feedback_margin: float = 0.05
    shift: bool = True
    shift_solve: ShiftSolveConfig = field(default_factory=ShiftSolveConfig)

    def __post_init__(self):
        if self.delta_sign not in DELTA_SIGNS:
            raise ParameterDomainError(f"delta_sign must be one of {DELTA_SIGNS}, got {self.delta_sign!r}")
        object.__setattr__(self, 'xi_mode', normalize_xi_mode(self.xi_mode))
        if not self.truncation > 0:
            raise ParameterDomainError(f"truncation must be > 0, got {self.truncation}")
        if self.inner_cut is not None and not 0 < self.inner_cut < self.truncation:
            raise ParameterDomainError(f"inner_cut must lie in (0, truncation), got {self.inner_cut}")
        if not 0 <= self.feedback_margin < 1:
            raise ParameterDomainError(f"feedback_margin must lie in [0, 1), got {self.feedback_margin}")

    @property
    def delta_factor(self):
        return -1.0 if self.delta_sign == 'minus' else 1.0


@dataclass(frozen=True)
class IntegralWeights:
    """
    Discretized jump operator on a PideGrid.

    ``matrix`` holds the linear interpolation stencils of u(x_i + xi_ik)
    weighted by w_k (interior rows only, off-grid targets dropped). The
    local parts are kept as node vectors:

        intensity      sum_k w_k
        mean_shift     sum_k w_k xi_ik
        inner_variance int_{|z| < eps} xi^2 nu(dz)
        delta          int (e^xi - 1 - xi) nu(dz)
    """
    matrix: sparse.csr_matrix
    intensity: np.ndarray
    mean_shift: np.ndarray
    inner_variance: np.ndarray
    delta: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    offgrid: np.ndarray
    x: np.ndarray
    dx: float

    @property
    def is_empty(self):
        return self.weights.size == 0

    def _derivatives(self, u):
        du = np.zeros_like(u)
        d2u = np.zeros_like(u)
        du[1:-1] = (u[2:] - u[:-2]) / (2.0 * self.dx)
        d2u[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / self.dx ** 2
        return du, d2u

    def apply(self, u):
        """f(u) at interior nodes with zero extension of u beyond the grid."""
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        if self.is_empty:
            return out
        du, d2u = self._derivatives(u)
        out[1:-1] = (self.matrix @ u)[1:-1] - self.intensity[1:-1] * u[1:-1] \
            - self.mean_shift[1:-1] * du[1:-1] + 0.5 * self.inner_variance[1:-1] * d2u[1:-1]
        return out

    def apply_compensated(self, u):
        """int (u(x + xi) - u - (e^xi - 1) u_x) nu(dz); constants and e^x are in its kernel."""
        out = self.apply(u)
        if self.is_empty:
            return out
        du, _ = self._derivatives(np.asarray(u, dtype=float))
        out[1:-1] -= self.delta[1:-1] * du[1:-1]
        return out


def _empty_weights(grid):
    n = grid.N + 1
    zeros = np.zeros(n)
    return IntegralWeights(matrix=sparse.csr_matrix((n, n)), intensity=zeros, mean_shift=zeros.copy(),
                           inner_variance=zeros.copy(), delta=zeros.copy(), targets=np.zeros((n, 0)),
                           weights=np.zeros(0), offgrid=np.zeros((n, 0), dtype=bool), x=grid.x, dx=grid.dx)


def build_integral_weights(grid, spec, xi_provider=None, truncation=DEFAULT_TRUNCATION, tau=0.0,
                           config=None):
    """
    Weight table of the jump operator at time level tau.

    :param xi_provider: callable xi(tau, x, z) on broadcast arrays; None means xi = z
    :return: IntegralWeights
    """
    config = config or PideConfig()
    inner_cut = config.inner_cut or grid.dx
    rule = quadrature_rule(spec, truncation=truncation, inner_cut=inner_cut,
                           nodes_per_panel=config.nodes_per_panel, panel_width=config.panel_width)
    if rule.w.size == 0:
        return _empty_weights(grid)

    x = grid.x
    n = grid.N + 1
    if xi_provider is None:
        xi = np.broadcast_to(rule.z[None, :], (n, rule.z.size)).copy()
        xi_inner = np.broadcast_to(rule.inner_z[None, :], (n, rule.inner_z.size))
    else:
        xi = np.asarray(xi_provider(tau, x[:, None], rule.z[None, :]), dtype=float)
        xi_inner = np.asarray(xi_provider(tau, x[:, None], rule.inner_z[None, :]), dtype=float)
    if not np.all(np.isfinite(xi)):
        raise ParameterDomainError("weight table: the shift function returned non-finite values")

    targets = x[:, None] + xi
    position = (targets + grid.L) / grid.dx
    inside = (position >= 0.0) & (position <= grid.N)
    inside[0, :] = False
    inside[-1, :] = False
    left = np.minimum(np.floor(np.where(inside, position, 0.0)), grid.N - 1).astype(int)
    frac = np.where(inside, position - left, 0.0)
    rows = np.broadcast_to(np.arange(n)[:, None], xi.shape)
    weight = np.broadcast_to(rule.w[None, :], xi.shape)

    rows_in, left_in, frac_in, w_in = rows[inside], left[inside], frac[inside], weight[inside]
    data = np.concatenate([w_in * (1.0 - frac_in), w_in * frac_in])
    cols = np.concatenate([left_in, left_in + 1])
    matrix = sparse.coo_matrix((data, (np.concatenate([rows_in, rows_in]), cols)), shape=(n, n)).tocsr()

    inner_variance = (xi_inner ** 2) @ rule.inner_w
    delta = (np.expm1(xi) - xi) @ rule.w + 0.5 * inner_variance
    return IntegralWeights(matrix=matrix, intensity=np.full(n, float(np.sum(rule.w))),
                           mean_shift=xi @ rule.w, inner_variance=inner_variance, delta=delta,
                           targets=targets, weights=rule.w, offgrid=~inside, x=x, dx=grid.dx)


def explicit_stability_number(weights, dt):
    """dt times the row-sum norm of the explicit interpolation operator."""
    if weights.is_empty:
        return 0.0
    return float(dt * abs(weights.matrix).sum(axis=1).max())


@dataclass
class Surface:
    """
    u(tau_j, x_i) on the grid. Row j belongs to tau_j = j T / M, row 0 is
    the payoff. Prices follow from V(0, S) = exp(-r T) u(T, ln(S/K)).
    """
    values: np.ndarray
    taus: np.ndarray
    x: np.ndarray
    grid: PideGrid
    scenario: object
    spec: object
    rho: float
    config: PideConfig
    feedback: bool = False
    strategy_name: str = 'none'

    def to_rows(self, every=1):
        for j in range(0, self.taus.size, every):
            for i in range(self.x.size):
                yield self.taus[j], self.x[i], self.values[j, i]

    def export(self, path, every=1):
        return write_array(path, ('tau', 'x', 'u'), self.to_rows(every))


class PideSolver(EventLogMixin):
    def __init__(self, scenario, spec, strategy=None, rho=0.0, grid=None, config=None, feedback=False,
                 logger=None, log_events=True):
        """
        :param scenario: MarketScenario
        :param spec: LevyMeasureSpec
        :param strategy: TradingStrategy psi(tau, x). Optional, no large trader when omitted.
        :param rho: liquidity parameter
        :param grid: PideGrid. Optional.
        :param config: PideConfig. Optional.
        :param feedback: use the feedback diffusion sigma^2/(1 - rho psi_x)^2
        """
        self.scenario = scenario
        self.spec = spec
        self.strategy = strategy or constant_strategy(0.0, scenario.strike, scenario.maturity)
        self.rho = float(rho)
        self.grid = grid or PideGrid()
        self.config = config or PideConfig()
        self.feedback = feedback
        self.log_events = log_events
        self.logger = logger
        if self.rho < 0:
            raise ParameterDomainError(f"rho must be >= 0, got {rho}")
        scenario.check_strategy_bound(self.strategy.holder_bound, self.rho)
        self._weights = None

    def _xi_provider(self):
        if self.rho == 0:
            return None
        return xi_provider(self.strategy, self.rho, self.config.xi_mode, config=self.config.shift_solve)

    def weights_at(self, tau):
        if self._weights is not None:
            return self._weights
        weights = build_integral_weights(self.grid, self.spec, self._xi_provider(), self.config.truncation,
                                         tau=tau, config=self.config)
        if self.rho == 0 or not self.strategy.time_dependent:
            self._weights = weights
        return weights

    def _diffusion(self, tau):
        sigma2 = self.scenario.sigma ** 2
        x = self.grid.x
        if not self.feedback:
            return np.full(x.size, sigma2)
        denominator = 1.0 - self.rho * np.asarray(self.strategy.s_dphi_ds(tau, x), dtype=float)
        if np.any(denominator <= self.config.feedback_margin):
            i = int(np.argmin(denominator))
            raise AssumptionViolation(
                f"1 - rho*psi_x = {denominator[i]:.6g} is below the margin {self.config.feedback_margin} "
                f"at node x={x[i]:.6g}, tau={tau:.6g}", node=(float(tau), float(x[i])))
        return sigma2 / denominator ** 2

    def _background(self, tau, x, derivatives=True):
        option = self.scenario.option
        return bs_transformed(tau, x, option.strike, self.scenario.sigma, self.scenario.r, option.kind,
                              derivatives=derivatives)

    def _banded_operator(self, diffusion, convection, reaction, dt):
        """Rows of I - dt*(a D2 + c D1 + reaction), upwinding where the cell Peclet number exceeds 1."""
        dx = self.grid.dx
        a = diffusion / dx ** 2
        central = np.abs(convection) * dx <= 2.0 * diffusion
        lower = np.where(central, a - convection / (2.0 * dx), a - np.minimum(convection, 0.0) / dx)
        upper = np.where(central, a + convection / (2.0 * dx), a + np.maximum(convection, 0.0) / dx)
        main = -(lower + upper) + reaction
        n = self.grid.N + 1
        banded = np.zeros((3, n))
        banded[1, :] = 1.0
        banded[1, 1:-1] = 1.0 - dt * main[1:-1]
        banded[0, 2:] = -dt * upper[1:-1]
        banded[2, :-2] = -dt * lower[1:-1]
        return banded

    def _source(self, tau, weights, sigma2_local):
        """Residual of the background u^BS in the full equation."""
        x = self.grid.x
        u, ux, uxx = self._background(tau, x)
        sign = self.config.delta_factor
        source = sign * weights.delta * ux
        if not weights.is_empty:
            shifted = self._background(tau, weights.targets, derivatives=False)
            source = source + (shifted - u[:, None] - (weights.targets - x[:, None]) * ux[:, None]) @ weights.weights
            source = source + 0.5 * weights.inner_variance * uxx
        if self.feedback:
            source = source + 0.5 * (sigma2_local - self.scenario.sigma ** 2) * (uxx - ux)
        source[0] = source[-1] = 0.0
        return source

    def _offgrid_data(self, tau, weights):
        """Explicit contribution of jumps leaving [-L, L] when marching u itself."""
        if weights.is_empty or not np.any(weights.offgrid):
            return np.zeros(self.grid.N + 1)
        values = np.where(weights.offgrid, self._background(tau, weights.targets, derivatives=False), 0.0)
        data = values @ weights.weights
        data[0] = data[-1] = 0.0
        return data

    def solve(self):
        grid, scenario, config = self.grid, self.scenario, self.config
        T = scenario.maturity
        dt = grid.dt(T)
        taus = grid.taus(T)
        x = grid.x
        shifted = config.shift
        sign = config.delta_factor
        r = scenario.r
        self.log('info', f"Solving {'feedback' if self.feedback else 'linear'} PIDE: "
                         f"{scenario.option.kind}, measure={self.spec.family}, rho={self.rho}, "
                         f"L={grid.L}, N={grid.N}, M={grid.M}, delta_sign={config.delta_sign}, "
                         f"xi_mode={config.xi_mode}, shift={shifted}")

        values = np.empty((grid.M + 1, grid.N + 1))
        background = self._background(0.0, x, derivatives=False)
        values[0] = background
        state = np.zeros(grid.N + 1) if shifted else background.copy()

        for n in range(grid.M):
            tau = taus[n + 1]
            weights = self.weights_at(tau)
            sigma2 = self._diffusion(tau)
            diffusion = 0.5 * (sigma2 + weights.inner_variance)
            convection = r - 0.5 * sigma2 + sign * weights.delta - weights.mean_shift
            reaction = -weights.intensity
            banded = self._banded_operator(diffusion, convection, reaction, dt)

            rhs = state.copy()
            if not weights.is_empty:
                rhs[1:-1] += dt * (weights.matrix @ state)[1:-1]
            if shifted:
                rhs[1:-1] += dt * self._source(tau, weights, sigma2)[1:-1]
                rhs[0] = rhs[-1] = 0.0
            else:
                rhs[1:-1] += dt * self._offgrid_data(taus[n], weights)[1:-1]
                edge = self._background(tau, x[[0, -1]], derivatives=False)
                rhs[0], rhs[-1] = edge[0], edge[1]

            state = solve_banded((1, 1), banded, rhs)
            if not np.all(np.isfinite(state)):
                raise SolverBreakdown(f"non-finite values after step {n + 1} (tau={tau:.6g})")
            values[n + 1] = state + self._background(tau, x, derivatives=False) if shifted else state
            self.log('debug', f"step {n + 1}/{grid.M}: max|U|={np.max(np.abs(state)):.6g}")

        self.log('info', f"PIDE solve finished, u(T, 0)={values[-1, grid.N // 2]:.10g}")
        return Surface(values=values, taus=taus, x=x, grid=grid, scenario=scenario, spec=self.spec,
                       rho=self.rho, config=config, feedback=self.feedback, strategy_name=self.strategy.name)


def solve_linear_pide(scenario, spec, strategy=None, rho=0.0, grid=None, config=None, logger=None,
                      log_events=False):
    """
    Linear PIDE with the shift xi from the prescribed strategy and constant
    diffusion sigma^2/2.

    :return: Surface
    """
    return PideSolver(scenario, spec, strategy, rho, grid, config, feedback=False, logger=logger,
                      log_events=log_events).solve()


def solve_feedback_pide(scenario, spec, strategy=None, rho=0.0, grid=None, config=None, logger=None,
                        log_events=False):
    """
    Feedback PIDE: diffusion sigma^2/(2 (1 - rho psi_x)^2) from the prescribed
    strategy; still linear in u because the strategy is exogenous.
    """
    return PideSolver(scenario, spec, strategy, rho, grid, config, feedback=True, logger=logger,
                      log_events=log_events).solve()


def price_from_surface(surface, S_list):
    """
    V(0, S) = exp(-r T) u(T, ln(S/K)) with cubic interpolation in x.

    :return: list of (S, V) tuples
    """
    K = surface.scenario.strike
    L = surface.grid.L
    S = np.asarray(S_list, dtype=float).ravel()
    if np.any(~(S > K * math.exp(-L))) or np.any(~(S < K * math.exp(L))):
        raise ParameterDomainError(f"spot prices must lie in ({K * math.exp(-L):.6g}, {K * math.exp(L):.6g})")
    spline = CubicSpline(surface.x, surface.values[-1])
    discount = math.exp(-surface.scenario.r * surface.scenario.maturity)
    prices = discount * spline(np.log(S / K))
    return [(float(s), float(v)) for s, v in zip(S, prices)]
