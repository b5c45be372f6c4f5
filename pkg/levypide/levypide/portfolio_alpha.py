"""
Parametric Markowitz value function

    alpha(phi) = min_{theta in Delta} -mu^T theta + phi/2 theta^T Sigma theta

over the simplex (long-only, fully invested) or over a finite set of
portfolios. On the simplex the minimizer comes from a primal active-set
method; on a fixed support it is affine in 1/phi,

    theta(phi) = a_F + b_F / phi,

which alpha_many uses to evaluate whole phi arrays at once.

Usage:
    problem = PortfolioProblem(mu=[0.1, 0.05], Sigma=[[0.09, -4.5e-4], [-4.5e-4, 1e-4]])
    alpha_value(problem, 2.0)
    lipschitz_bounds(problem)
    inverse_alpha(problem, 0.0)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect

from levypide.errors import ConvergenceError, ParameterDomainError
from levypide.utils.tables import write_array

ACTIVE_SET_MAX_N = 20
KKT_TOL = 1e-12


@dataclass(frozen=True)
class Simplex:
    n: int


@dataclass(frozen=True)
class Discrete:
    points: tuple

    @classmethod
    def of(cls, points):
        return cls(tuple(tuple(float(v) for v in p) for p in points))


class AlphaResult(NamedTuple):
    alpha: float
    theta: np.ndarray


class LipschitzBounds(NamedTuple):
    omega: float
    L: float


class PortfolioProblem:
    def __init__(self, mu, Sigma, decision_set=None):
        """
        :param mu: mean returns, n-vector
        :param Sigma: covariance, symmetric positive definite n x n
        :param decision_set: Simplex or Discrete, the full simplex when omitted
        """
        self.mu = np.asarray(mu, dtype=float).ravel()
        self.Sigma = np.asarray(Sigma, dtype=float)
        n = self.mu.size
        if n < 1 or self.Sigma.shape != (n, n):
            raise ParameterDomainError(f"Sigma must be {n}x{n}, got shape {self.Sigma.shape}")
        if not np.all(np.isfinite(self.mu)) or not np.all(np.isfinite(self.Sigma)):
            raise ParameterDomainError("mu and Sigma must be finite")
        if not np.allclose(self.Sigma, self.Sigma.T, rtol=0.0, atol=1e-12 * max(1.0, np.max(np.abs(self.Sigma)))):
            raise ParameterDomainError("Sigma must be symmetric")
        try:
            np.linalg.cholesky(self.Sigma)
        except np.linalg.LinAlgError:
            raise ParameterDomainError("Sigma must be positive definite")
        self.decision_set = decision_set or Simplex(n)
        if isinstance(self.decision_set, Simplex):
            if self.decision_set.n != n:
                raise ParameterDomainError(f"simplex dimension {self.decision_set.n} does not match n={n}")
        elif isinstance(self.decision_set, Discrete):
            points = np.asarray(self.decision_set.points, dtype=float)
            if points.ndim != 2 or points.shape[1] != n or points.shape[0] < 1:
                raise ParameterDomainError(f"discrete decision set must be a list of {n}-vectors")
            if np.any(points < -1e-12) or np.any(np.abs(points.sum(axis=1) - 1.0) > 1e-12):
                raise ParameterDomainError("discrete portfolios must be nonnegative and sum to 1")
        else:
            raise ParameterDomainError(f"unknown decision set {self.decision_set!r}")

    @property
    def n(self):
        return self.mu.size

    @property
    def is_discrete(self):
        return isinstance(self.decision_set, Discrete)

    def objective(self, theta, phi):
        theta = np.asarray(theta, dtype=float)
        return float(-self.mu @ theta + 0.5 * phi * theta @ self.Sigma @ theta)

    def scaled(self, factor):
        return PortfolioProblem(factor * self.mu, factor * self.Sigma, self.decision_set)

    def restricted_to(self, points):
        return PortfolioProblem(self.mu, self.Sigma, Discrete.of(points))


def _check_phi(phi):
    if not phi > 0 or not math.isfinite(phi):
        raise ParameterDomainError(f"phi must be finite and > 0, got {phi}")


def discrete_lines(problem):
    """Slopes E_i = theta_i^T Sigma theta_i / 2 and intercepts D_i = -mu^T theta_i."""
    points = np.asarray(problem.decision_set.points, dtype=float)
    E = 0.5 * np.einsum('ij,jk,ik->i', points, problem.Sigma, points)
    D = -points @ problem.mu
    return E, D


def _discrete_choice(E, D, phi):
    values = E * phi + D
    best = values.min()
    tied = np.flatnonzero(values <= best + 1e-15 * max(1.0, abs(best)))
    return int(tied[np.argmin(E[tied])])


def _equality_qp(Q, c, free):
    """Minimize 1/2 t^T Q t + c^T t over the free coordinates subject to sum t = 1."""
    k = len(free)
    Q_ff = Q[np.ix_(free, free)]
    kkt = np.block([[Q_ff, np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
    rhs = np.concatenate([-c[free], [1.0]])
    solution = np.linalg.solve(kkt, rhs)
    return solution[:k], float(solution[k])


def active_set_qp(mu, Sigma, phi, max_iter=500):
    """
    Primal active-set method for min -mu^T t + phi/2 t^T Sigma t on the
    simplex, started at the vertex of largest mean.

    :return: (theta, free) with free the sorted list of support indices
    """
    n = mu.size
    Q = phi * Sigma
    c = -mu
    scale = max(1.0, float(np.max(np.abs(Q))), float(np.max(np.abs(c))))
    start = int(np.argmax(mu))
    theta = np.zeros(n)
    theta[start] = 1.0
    free = [start]
    for _ in range(max_iter):
        target, nu = _equality_qp(Q, c, free)
        full = np.zeros(n)
        full[free] = target
        step = full - theta
        if np.max(np.abs(step)) <= 1e-14:
            theta = full
            duals = Q @ theta + c + nu
            bound = [i for i in range(n) if i not in free]
            if not bound:
                return theta, free
            worst = min(bound, key=lambda i: duals[i])
            if duals[worst] >= -KKT_TOL * scale:
                return theta, free
            free = sorted(free + [worst])
            continue
        ratio, blocking = 1.0, None
        for i in free:
            if step[i] < 0 and -theta[i] / step[i] < ratio:
                ratio, blocking = -theta[i] / step[i], i
        theta = theta + ratio * step
        if blocking is not None:
            theta[blocking] = 0.0
            free = [i for i in free if i != blocking]
    raise ConvergenceError(f"active set method did not terminate in {max_iter} iterations",
                           iterations=max_iter)


def project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u) - 1.0
    index = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - cumulative / index > 0)[-1]
    return np.maximum(v - cumulative[rho] / (rho + 1.0), 0.0)


def projected_gradient(mu, Sigma, phi, tol=1e-12, max_iter=1_000_000):
    """Accelerated projected gradient on the simplex; stops when the projected step is below tol."""
    Q = phi * Sigma
    step = 1.0 / float(np.max(np.linalg.eigvalsh(Q)))
    theta = np.full(mu.size, 1.0 / mu.size)
    stationarity = math.inf
    y, momentum = theta.copy(), 1.0
    for _ in range(max_iter):
        updated = project_simplex(y - step * (Q @ y - mu))
        stationarity = np.max(np.abs(updated - project_simplex(updated - step * (Q @ updated - mu))))
        if stationarity <= tol:
            return updated
        following = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        y = updated + (momentum - 1.0) / following * (updated - theta)
        theta, momentum = updated, following
    raise ConvergenceError(f"projected gradient did not reach stationarity {tol} in {max_iter} iterations",
                           last_residual=stationarity, iterations=max_iter)


def optimal_portfolio(problem, phi):
    """Minimizer theta(phi) on the decision set."""
    _check_phi(phi)
    if problem.is_discrete:
        E, D = discrete_lines(problem)
        return np.asarray(problem.decision_set.points[_discrete_choice(E, D, phi)], dtype=float)
    if problem.n > ACTIVE_SET_MAX_N:
        return projected_gradient(problem.mu, problem.Sigma, phi)
    theta, _ = active_set_qp(problem.mu, problem.Sigma, phi)
    return theta


def alpha_value(problem, phi):
    """
    :return: AlphaResult(alpha, theta)
    """
    theta = optimal_portfolio(problem, phi)
    return AlphaResult(problem.objective(theta, phi), theta)


def alpha_derivative(problem, phi):
    """Envelope slope theta^T Sigma theta / 2; on discrete sets the slope of the active line."""
    theta = optimal_portfolio(problem, phi)
    return float(0.5 * theta @ problem.Sigma @ theta)


def lipschitz_bounds(problem):
    """
    omega = min of theta^T Sigma theta / 2 over the decision set,
    L = its maximum, attained at a vertex.
    """
    if problem.is_discrete:
        E, _ = discrete_lines(problem)
        return LipschitzBounds(float(E.min()), float(E.max()))
    zero = np.zeros(problem.n)
    if problem.n > ACTIVE_SET_MAX_N:
        theta = projected_gradient(zero, problem.Sigma, 1.0)
    else:
        theta, _ = active_set_qp(zero, problem.Sigma, 1.0)
    return LipschitzBounds(float(0.5 * theta @ problem.Sigma @ theta), float(0.5 * np.max(np.diag(problem.Sigma))))


def support_mask(theta, tol=1e-12):
    """Bitmask of the assets held, bit i set when theta_i > tol."""
    return int(sum(1 << i for i, value in enumerate(np.asarray(theta)) if value > tol))


def _support_affine(problem, free):
    Sigma_ff = problem.Sigma[np.ix_(free, free)]
    ones = np.ones(len(free))
    inv_one = np.linalg.solve(Sigma_ff, ones)
    inv_mu = np.linalg.solve(Sigma_ff, problem.mu[free])
    a = inv_one / inv_one.sum()
    b = inv_mu - inv_mu.sum() * a
    return a, b


def _support_kkt_holds(problem, free, phis):
    """theta(phi) on a fixed support with the mask of phis where it is KKT optimal."""
    a, b = _support_affine(problem, free)
    n = problem.n
    theta = np.zeros((phis.size, n))
    theta[:, free] = a[None, :] + b[None, :] / phis[:, None]
    grad = phis[:, None] * (theta @ problem.Sigma) - problem.mu[None, :]
    nu = -grad[:, free[0]]
    duals = grad + nu[:, None]
    scale = np.maximum(1.0, np.maximum(phis * np.max(np.abs(problem.Sigma)), np.max(np.abs(problem.mu))))
    bound = [i for i in range(n) if i not in free]
    ok = np.all(theta[:, free] >= -1e-12, axis=1)
    if bound:
        ok &= np.all(duals[:, bound] >= -KKT_TOL * scale[:, None], axis=1)
    return theta, ok


def alpha_many(problem, phis):
    """
    alpha, slope and minimizers for an array of phi values.

    :return: (alpha, slope, theta) with theta of shape (len(phis), n)
    """
    phis = np.asarray(phis, dtype=float)
    flat = phis.ravel()
    if np.any(~(flat > 0)) or not np.all(np.isfinite(flat)):
        raise ParameterDomainError("alpha_many: every phi must be finite and > 0")
    n = problem.n
    theta = np.zeros((flat.size, n))
    if problem.is_discrete:
        E, D = discrete_lines(problem)
        points = np.asarray(problem.decision_set.points, dtype=float)
        values = flat[:, None] * E[None, :] + D[None, :]
        best = values.min(axis=1)
        tied = values <= (best + 1e-15 * np.maximum(1.0, np.abs(best)))[:, None]
        choice = np.argmin(np.where(tied, E[None, :], np.inf), axis=1)
        theta = points[choice]
    elif n > ACTIVE_SET_MAX_N:
        for k, phi in enumerate(flat):
            theta[k] = projected_gradient(problem.mu, problem.Sigma, phi)
    else:
        pending = np.ones(flat.size, dtype=bool)
        while np.any(pending):
            first = int(np.flatnonzero(pending)[0])
            _, free = active_set_qp(problem.mu, problem.Sigma, flat[first])
            candidate, ok = _support_kkt_holds(problem, free, flat)
            ok &= pending
            ok[first] = True
            theta[ok] = candidate[ok]
            pending &= ~ok
    quad = 0.5 * np.einsum('ij,jk,ik->i', theta, problem.Sigma, theta)
    alpha = -theta @ problem.mu + flat * quad
    return alpha.reshape(phis.shape), quad.reshape(phis.shape), theta.reshape(phis.shape + (n,))


@dataclass(frozen=True)
class Breakpoints:
    """
    Two-asset simplex, theta = s e_high + (1 - s) e_low:

        alpha = E_minus phi + D_minus          phi <= phi_minus
              = A - B / phi + C phi            phi_minus < phi < phi_plus
              = E_plus phi + D_plus            phi >= phi_plus
    """
    phi_minus: float
    phi_plus: float
    A: float
    B: float
    C: float
    D_minus: float
    E_minus: float
    D_plus: float
    E_plus: float
    high: int
    low: int
    interior_empty: bool

    def value(self, phi):
        if phi <= self.phi_minus:
            return self.E_minus * phi + self.D_minus
        if phi >= self.phi_plus:
            return self.E_plus * phi + self.D_plus
        return self.A - self.B / phi + self.C * phi

    def slope(self, phi):
        if phi <= self.phi_minus:
            return self.E_minus
        if phi >= self.phi_plus:
            return self.E_plus
        return self.B / phi ** 2 + self.C


def breakpoints_n2(problem):
    """
    Closed-form three-branch alpha for two assets. phi_minus is where the
    lower-mean asset enters, phi_plus where the higher-mean asset leaves;
    an absent switch is reported as inf.
    """
    if problem.n != 2 or problem.is_discrete:
        raise ParameterDomainError("breakpoints_n2 needs a two-asset simplex problem")
    mu, Sigma = problem.mu, problem.Sigma
    high = 0 if mu[0] >= mu[1] else 1
    low = 1 - high
    gap = float(mu[high] - mu[low])
    a = float(Sigma[high, high] - 2.0 * Sigma[high, low] + Sigma[low, low])
    b = float(Sigma[high, low] - Sigma[low, low])
    det = float(Sigma[high, high] * Sigma[low, low] - Sigma[high, low] ** 2)
    common = dict(A=-float(mu[low]) + b * gap / a, B=gap * gap / (2.0 * a), C=det / (2.0 * a),
                  D_minus=-float(mu[high]), E_minus=0.5 * float(Sigma[high, high]),
                  D_plus=-float(mu[low]), E_plus=0.5 * float(Sigma[low, low]), high=high, low=low)
    if gap == 0.0:
        if b < 0 and a + b > 0:
            return Breakpoints(phi_minus=0.0, phi_plus=math.inf, interior_empty=False, **common)
        # one vertex for every phi: the high one when a + b <= 0, else the low one
        edge = math.inf if a + b <= 0 else 0.0
        return Breakpoints(phi_minus=edge, phi_plus=edge, interior_empty=True, **common)
    phi_minus = gap / (a + b) if a + b > 0 else math.inf
    phi_plus = gap / b if b > 0 else math.inf
    return Breakpoints(phi_minus=phi_minus, phi_plus=phi_plus, interior_empty=math.isinf(phi_minus), **common)


def inverse_alpha(problem, psi_target, drift_shift=0.0, phi_offset=0.0, tol=1e-10):
    """
    phi with alpha(phi + phi_offset) - drift_shift = psi_target, by bisection.

    :param drift_shift: x-dependent part subtracted from alpha, e.g. eps(e^x) e^{-x}
    :param phi_offset: argument shift, 1 for the drift-augmented HJB value function
    """
    target = float(psi_target) + float(drift_shift)
    lower = 1e-12

    def excess(argument):
        return alpha_value(problem, argument).alpha - target

    if excess(lower) > 0:
        raise ParameterDomainError(f"target {psi_target} lies below the range of alpha")
    upper = 1.0
    while excess(upper) < 0:
        upper *= 2.0
        if upper > 2.0 ** 60:
            raise ParameterDomainError(f"target {psi_target} lies above the range of alpha")
    slope = max(lipschitz_bounds(problem).L, 1.0)
    argument = bisect(excess, lower, upper, xtol=0.5 * tol / slope, maxiter=400)
    return argument - phi_offset


class AlphaCurve:
    """alpha, alpha' and the support bitmask tabulated on a phi grid."""

    def __init__(self, problem, phis):
        self.problem = problem
        self.phi = np.asarray(phis, dtype=float)
        self.alpha, self.slope, self.theta = alpha_many(problem, self.phi)
        self.support = np.array([support_mask(t) for t in self.theta], dtype=int)

    def rows(self):
        for k in range(self.phi.size):
            yield self.phi[k], self.alpha[k], self.slope[k], int(self.support[k])

    def export(self, path):
        return write_array(path, ('phi', 'alpha', 'alpha_prime', 'support'), self.rows())
