"""
Finite volume solver for the Riccati transformed HJB equation of dynamic
portfolio selection

    phi_tau - d2/dx2 alpha(x, phi) = -d/dx (alpha(x, phi) phi),
    phi(x, 0) = phi0(x) = -u''(x) / u'(x),

on [-X, X] with homogeneous Neumann boundaries. x = ln y is the log of the
portfolio value and

    alpha(x, phi) = min_theta -mu^T theta + (phi + 1)/2 theta^T Sigma theta - eps(e^x) e^{-x}

once the drift mu^T theta - theta^T Sigma theta / 2 + eps(e^x) e^{-x} of x is
inserted; eps is the cash inflow, 0 below y_minus and C above.

Each step treats the diffusion flux d/dx alpha implicitly (Newton passes on
the frozen-slope tridiagonal system) and the convective flux alpha phi
explicitly with upwinding by the sign of alpha.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solve_banded

from levypide.errors import ConvergenceError, ParameterDomainError, SolverBreakdown
from levypide.portfolio_alpha import alpha_many, lipschitz_bounds, support_mask
from levypide.utils.logger import EventLogMixin
from levypide.utils.tables import write_array

UTILITY_KINDS = ('dara', 'arctan', 'sampled')


@dataclass(frozen=True)
class UtilitySpec:
    kind: str
    a0: float = 0.0
    a1: float = 0.0
    x_star: float = 0.0
    gamma: float = 6.0
    samples: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ParameterDomainError(f"utility kind must be one of {UTILITY_KINDS}, got {self.kind!r}")
        if self.kind == 'dara' and not (self.a0 > 0 and self.a1 > 0):
            raise ParameterDomainError(f"DARA utility needs a0 > 0 and a1 > 0, got {self.a0}, {self.a1}")
        if not self.gamma > 0:
            raise ParameterDomainError(f"truncation gamma must be > 0, got {self.gamma}")
        if self.kind == 'sampled':
            if self.samples is None:
                raise ParameterDomainError("sampled utility needs (x, phi0) samples")
            x, values = (np.asarray(item, dtype=float) for item in self.samples)
            if x.size < 2 or x.shape != values.shape or np.any(np.diff(x) <= 0) or not np.all(np.isfinite(values)):
                raise ParameterDomainError("sampled phi0 needs finite values on increasing nodes")

    @classmethod
    def dara(cls, a0, a1, x_star, gamma=6.0):
        return cls('dara', a0=float(a0), a1=float(a1), x_star=float(x_star), gamma=float(gamma))

    @classmethod
    def arctan(cls):
        return cls('arctan')

    @classmethod
    def sampled(cls, x, values):
        return cls('sampled', samples=(tuple(float(v) for v in x), tuple(float(v) for v in values)))


@dataclass(frozen=True)
class HjbGrid:
    X: float = 5.0
    Nx: int = 200
    T: float = 1.0
    Nt: int = 200

    def __post_init__(self):
        if not self.X > 0 or not self.T > 0:
            raise ParameterDomainError(f"HJB grid needs X > 0 and T > 0, got {self.X}, {self.T}")
        if self.Nx < 16:
            raise ParameterDomainError(f"HJB grid Nx must be >= 16, got {self.Nx}")
        if self.Nt < 2:
            raise ParameterDomainError(f"HJB grid Nt must be >= 2, got {self.Nt}")

    @property
    def dx(self):
        return 2.0 * self.X / self.Nx

    @property
    def dt(self):
        return self.T / self.Nt

    @property
    def x(self):
        """Cell centres."""
        return -self.X + self.dx * (np.arange(self.Nx) + 0.5)

    @property
    def taus(self):
        return self.T * np.arange(self.Nt + 1) / self.Nt


@dataclass(frozen=True)
class DriftSpec:
    C: float = 0.0
    y_minus: float = 1.0
    ito_correction: bool = True

    def __post_init__(self):
        if not math.isfinite(self.C):
            raise ParameterDomainError(f"inflow C must be finite, got {self.C}")
        if not self.y_minus > 0:
            raise ParameterDomainError(f"y_minus must be > 0, got {self.y_minus}")

    def inflow_term(self, x):
        """eps(e^x) e^{-x}."""
        x = np.asarray(x, dtype=float)
        return np.where(x > math.log(self.y_minus), self.C * np.exp(-x), 0.0)

    @property
    def rate(self):
        """sup_x |d/dx eps(e^x) e^{-x}| = |C| / y_minus."""
        return abs(self.C) / self.y_minus


class DriftAlpha:
    """alpha(x, phi) and its phi-slope for a portfolio problem and a drift."""

    def __init__(self, problem, drift=None):
        self.problem = problem
        self.drift = drift or DriftSpec()

    def argument(self, phi):
        phi = np.asarray(phi, dtype=float)
        return phi + 1.0 if self.drift.ito_correction else phi

    def evaluate(self, x, phi, with_theta=False):
        argument = self.argument(phi)
        if np.any(~(argument > 0)):
            raise ParameterDomainError(f"alpha needs phi above {-1.0 if self.drift.ito_correction else 0.0}, "
                                       f"got min {float(np.min(phi)):.6g}")
        alpha, slope, theta = alpha_many(self.problem, argument)
        alpha = alpha - self.drift.inflow_term(x)
        return (alpha, slope, theta) if with_theta else (alpha, slope)


def phi0_from_utility(spec, grid):
    """
    Initial risk aversion profile -u''/u' on the grid cells (or on an array of x).
    DARA is a0 up to x_star and a1 beyond, zero outside (-gamma, gamma).
    """
    x = grid.x if isinstance(grid, HjbGrid) else np.asarray(grid, dtype=float)
    if spec.kind == 'dara':
        values = np.where(x <= spec.x_star, spec.a0, spec.a1)
        return np.where(np.abs(x) < spec.gamma, values, 0.0)
    if spec.kind == 'arctan':
        return 2.0 * x / (1.0 + x * x)
    nodes, samples = (np.asarray(item, dtype=float) for item in spec.samples)
    return np.interp(x, nodes, samples)


class AprioriBounds(NamedTuple):
    psi_lower: float
    psi_upper: float
    rate: float

    def envelope(self, tau):
        growth = math.exp(self.rate * tau)
        return self.psi_lower * growth, self.psi_upper * growth


def apriori_bounds(problem, phi0, x, drift=None):
    """
    psi_lower = min(0, inf alpha(x, phi0)), psi_upper = max(0, sup alpha(x, phi0))
    and the growth rate lambda = sup_x p(x) of the envelope psi e^{lambda tau}.
    """
    alpha, _ = DriftAlpha(problem, drift).evaluate(x, phi0)
    rate = (drift or DriftSpec()).rate
    return AprioriBounds(min(0.0, float(np.min(alpha))), max(0.0, float(np.max(alpha))), rate)


@dataclass(frozen=True)
class HjbConfig:
    picard_tol: float = 1e-9
    picard_max_iter: int = 50
    envelope_tol: float = 1e-6
    flip_source: bool = False

    def __post_init__(self):
        if not self.picard_tol > 0 or self.picard_max_iter < 1:
            raise ParameterDomainError("picard_tol must be > 0 and picard_max_iter >= 1")
        if not self.envelope_tol >= 0:
            raise ParameterDomainError(f"envelope_tol must be >= 0, got {self.envelope_tol}")


@dataclass
class ConservationLedger:
    """Total mass dx * sum(phi) per step against mass_0 plus the accumulated boundary flux."""
    mass: List[float] = field(default_factory=list)
    expected: List[float] = field(default_factory=list)

    @property
    def max_error(self):
        if not self.mass:
            return 0.0
        return float(np.max(np.abs(np.asarray(self.mass) - np.asarray(self.expected))))


@dataclass
class HjbSurface:
    phi: np.ndarray
    alpha: np.ndarray
    taus: np.ndarray
    x: np.ndarray
    grid: HjbGrid
    bounds: AprioriBounds
    ledger: ConservationLedger
    violations: list
    newton_iterations: list

    def sample(self, times):
        """Rows nearest to the requested output times."""
        index = [int(round(t / self.grid.T * self.grid.Nt)) for t in times]
        if any(j < 0 or j > self.grid.Nt for j in index):
            raise ParameterDomainError(f"output times must lie in [0, {self.grid.T}]")
        return index


def value_function_shape(x, phi):
    """
    V up to an affine change V -> c1 V + c2 from phi = -V_xx / V_x:
    V_x = exp(-int phi), V = int V_x, both integrals from x[0].
    """
    log_slope = -cumulative_trapezoid(np.asarray(phi, dtype=float), x, initial=0.0)
    return cumulative_trapezoid(np.exp(log_slope), x, initial=0.0)


class RiccatiSolver(EventLogMixin):
    def __init__(self, problem, drift=None, grid=None, config=None, logger=None, log_events=True):
        """
        :param problem: PortfolioProblem
        :param drift: DriftSpec. Optional, no inflow by default.
        :param grid: HjbGrid. Optional.
        :param config: HjbConfig. Optional.
        """
        self.problem = problem
        self.drift = drift or DriftSpec()
        self.grid = grid or HjbGrid()
        self.config = config or HjbConfig()
        self.alpha = DriftAlpha(problem, self.drift)
        self.logger = logger
        self.log_events = log_events
        # the flux is d/dx alpha + sign * alpha * phi
        self.sign = 1.0 if self.config.flip_source else -1.0

    def convective_flux(self, alpha, phi):
        """Upwind face fluxes sign * alpha * phi on the Nx + 1 faces, boundary cells extended."""
        face = np.empty(alpha.size + 1)
        face[1:-1] = 0.5 * (alpha[:-1] + alpha[1:])
        face[0], face[-1] = alpha[0], alpha[-1]
        left = np.concatenate([phi[:1], phi])
        right = np.concatenate([phi, phi[-1:]])
        velocity = -self.sign * face
        return self.sign * face * np.where(velocity > 0, left, right)

    @staticmethod
    def _laplacian(values):
        lap = np.empty_like(values)
        lap[1:-1] = values[2:] - 2.0 * values[1:-1] + values[:-2]
        lap[0] = values[1] - values[0]
        lap[-1] = values[-2] - values[-1]
        return lap

    def _newton_system(self, slope, c):
        n = slope.size
        degree = np.full(n, 2.0)
        degree[0] = degree[-1] = 1.0
        banded = np.zeros((3, n))
        banded[1] = 1.0 + c * degree * slope
        banded[0, 1:] = -c * slope[1:]
        banded[2, :-1] = -c * slope[:-1]
        return banded

    def step(self, phi, x, dt):
        """
        One time step from phi; returns (phi_new, boundary_flux, iterations).
        boundary_flux is F(right) - F(left) of the explicit convective flux.
        """
        dx = self.grid.dx
        c = dt / dx ** 2
        alpha_n, _ = self.alpha.evaluate(x, phi)
        flux = self.convective_flux(alpha_n, phi)
        explicit = phi + dt / dx * np.diff(flux)
        current = phi.copy()
        for iteration in range(1, self.config.picard_max_iter + 1):
            alpha_k, slope_k = self.alpha.evaluate(x, current)
            residual = explicit + c * self._laplacian(alpha_k) - current
            delta = solve_banded((1, 1), self._newton_system(slope_k, c), residual)
            if not np.all(np.isfinite(delta)):
                raise SolverBreakdown("non-finite Newton correction in the HJB step")
            current = current + delta
            if np.max(np.abs(delta)) <= self.config.picard_tol:
                return current, float(flux[-1] - flux[0]), iteration
        raise ConvergenceError(f"HJB step: no convergence in {self.config.picard_max_iter} passes",
                               last_residual=float(np.max(np.abs(delta))),
                               iterations=self.config.picard_max_iter)

    def solve(self, phi0):
        grid, config = self.grid, self.config
        x, dt, dx = grid.x, grid.dt, grid.dx
        phi = np.asarray(phi0, dtype=float).copy()
        if phi.shape != x.shape:
            raise ParameterDomainError(f"phi0 must have {grid.Nx} cell values, got shape {phi.shape}")
        omega, L = lipschitz_bounds(self.problem)
        bounds = apriori_bounds(self.problem, phi, x, self.drift)
        self.log('info', f"Solving Riccati HJB: X={grid.X}, Nx={grid.Nx}, T={grid.T}, Nt={grid.Nt}, "
                         f"omega={omega:.6g}, L={L:.6g}, envelope=[{bounds.psi_lower:.6g}, "
                         f"{bounds.psi_upper:.6g}], lambda={bounds.rate:.6g}")

        taus = grid.taus
        phis = np.empty((grid.Nt + 1, grid.Nx))
        alphas = np.empty_like(phis)
        phis[0] = phi
        alphas[0], _ = self.alpha.evaluate(x, phi)
        courant = dt * float(np.max(np.abs(alphas[0]))) / dx
        if courant > 1.0:
            self.log('warning', f"explicit convection Courant number {courant:.3g} exceeds 1")
        ledger = ConservationLedger(mass=[dx * float(np.sum(phi))], expected=[dx * float(np.sum(phi))])
        violations, iterations = [], []

        for n in range(grid.Nt):
            phi, boundary_flux, passes = self.step(phi, x, dt)
            iterations.append(passes)
            phis[n + 1] = phi
            alphas[n + 1], _ = self.alpha.evaluate(x, phi)
            ledger.mass.append(dx * float(np.sum(phi)))
            ledger.expected.append(ledger.expected[-1] + dt * boundary_flux)
            lower, upper = bounds.envelope(taus[n + 1])
            excess = max(float(np.max(lower - alphas[n + 1])), float(np.max(alphas[n + 1] - upper)))
            if excess > config.envelope_tol:
                violations.append((float(taus[n + 1]), excess))
                self.log('warning', f"tau={taus[n + 1]:.6g}: a-priori envelope exceeded by {excess:.3g}")
            self.log('debug', f"step {n + 1}/{grid.Nt}: {passes} Newton passes")

        self.log('info', f"HJB solve finished, ledger error {ledger.max_error:.3g}, "
                         f"{len(violations)} envelope violations")
        return HjbSurface(phi=phis, alpha=alphas, taus=taus, x=x, grid=grid, bounds=bounds, ledger=ledger,
                          violations=violations, newton_iterations=iterations)


def solve_riccati_pde(problem, drift, phi0, grid=None, config=None, logger=None, log_events=False):
    """
    :return: HjbSurface with phi and alpha(x, phi) at every time level
    """
    return RiccatiSolver(problem, drift, grid, config, logger=logger, log_events=log_events).solve(phi0)


@dataclass
class WeightsSurface:
    theta: np.ndarray
    support: np.ndarray
    contours: list


def optimal_weights_surface(problem, surface, drift=None):
    """
    theta(x, tau) of every node of a solved surface with the support
    bitmasks and the (tau, x) faces where the support changes.
    """
    shape = surface.phi.shape
    _, _, theta = DriftAlpha(problem, drift).evaluate(surface.x[None, :], surface.phi, with_theta=True)
    support = np.array([support_mask(t) for t in theta.reshape(-1, problem.n)], dtype=int).reshape(shape)
    contours = []
    for j in range(shape[0]):
        for i in np.flatnonzero(support[j, 1:] != support[j, :-1]):
            contours.append((float(surface.taus[j]), float(0.5 * (surface.x[i] + surface.x[i + 1]))))
    return WeightsSurface(theta=theta, support=support, contours=contours)


def export_surface(path, surface, weights, every=1):
    n = weights.theta.shape[-1]
    header = ('tau', 'x', 'phi', 'alpha') + tuple(f'theta{k + 1}' for k in range(n))

    def rows():
        for j in range(0, surface.taus.size, every):
            for i in range(surface.x.size):
                yield (surface.taus[j], surface.x[i], surface.phi[j, i], surface.alpha[j, i],
                       *weights.theta[j, i])

    return write_array(path, header, rows())
