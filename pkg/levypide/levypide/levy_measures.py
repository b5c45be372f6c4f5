"""
Levy measure families and quadrature of compensated Levy integrals.

Overview:
    A LevyMeasureSpec describes the jump part nu(dz) = h(z) dz of an
    exponential Levy model. Four families are supported:

        merton   lambda/(sqrt(2 pi) delta) exp(-(z-m)^2 / (2 delta^2))
        kou      lambda (p l+ e^{-l+ z} 1_{z>0} + (1-p) l- e^{l- z} 1_{z<0})
        vg       exp(A z - B|z|) / (kappa |z|)
        nig      C exp(A z) K1(B|z|) / |z|

    with A, B, C the usual variance gamma / normal inverse Gaussian
    constants built from (theta, sigma, kappa).

Usage:
    spec = LevyMeasureSpec.merton(lam=0.1, m=-0.2, delta=0.15)
    density(spec, 0.1)
    compensated_integral(spec, lambda z: np.expm1(z) - z).value
    martingale_drift(spec, 0.23)

Tips:
    Integrands passed to compensated_integral and quadrature_rule consumers
    are evaluated on numpy arrays, so write them with numpy ufuncs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from levypide.errors import FamilyMismatchError, ParameterDomainError, QuadratureError

FAMILIES = ('merton', 'kou', 'vg', 'nig')

DEFAULT_TRUNCATION = 8.0
DEFAULT_INNER_CUT = 1e-4
DEFAULT_REL_TOL = 1e-9
DEFAULT_MAX_LEVELS = 20

_GL_COARSE = leggauss(10)
_GL_FINE = leggauss(20)

# keys used in key=value config blocks, per family
SPEC_KEYS = {
    'merton': (('lambda', 'lam'), ('m', 'm'), ('delta', 'delta')),
    'kou': (('lambda', 'lam'), ('p', 'p'), ('lambda_plus', 'lam_plus'), ('lambda_minus', 'lam_minus')),
    'vg': (('theta', 'theta'), ('sigma', 'sigma'), ('kappa', 'kappa')),
    'nig': (('theta', 'theta'), ('sigma', 'sigma'), ('kappa', 'kappa')),
}


@dataclass(frozen=True)
class LevyMeasureSpec:
    """
    Tagged Levy measure. Build it with the family constructors rather than
    directly; unused fields stay at zero.
    """
    family: str
    lam: float = 0.0
    m: float = 0.0
    delta: float = 0.0
    p: float = 0.0
    lam_plus: float = 0.0
    lam_minus: float = 0.0
    theta: float = 0.0
    sigma: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterDomainError(f"unknown Levy family '{self.family}', expected one of {FAMILIES}")
        for name in ('lam', 'm', 'delta', 'p', 'lam_plus', 'lam_minus', 'theta', 'sigma', 'kappa'):
            if not math.isfinite(getattr(self, name)):
                raise ParameterDomainError(f"{self.family}: {name} must be finite")
        if self.family == 'merton':
            if self.lam < 0:
                raise ParameterDomainError(f"merton: lambda must be >= 0, got {self.lam}")
            if self.delta <= 0:
                raise ParameterDomainError(f"merton: delta must be > 0, got {self.delta}")
        elif self.family == 'kou':
            if self.lam < 0:
                raise ParameterDomainError(f"kou: lambda must be >= 0, got {self.lam}")
            if not 0.0 <= self.p <= 1.0:
                raise ParameterDomainError(f"kou: p must lie in [0, 1], got {self.p}")
            if self.lam_plus <= 1.0:
                raise ParameterDomainError(f"kou: lambda_plus must be > 1 for a finite exponential moment, got {self.lam_plus}")
            if self.lam_minus <= 0:
                raise ParameterDomainError(f"kou: lambda_minus must be > 0, got {self.lam_minus}")
        else:
            if self.sigma <= 0 or self.kappa <= 0:
                raise ParameterDomainError(f"{self.family}: sigma and kappa must be > 0")
            if self.B - self.A <= 1.0:
                raise ParameterDomainError(
                    f"{self.family}: upward tail decay B-A={self.B - self.A:.6g} must exceed 1 "
                    f"for a finite exponential moment")

    @classmethod
    def merton(cls, lam, m, delta):
        return cls('merton', lam=float(lam), m=float(m), delta=float(delta))

    @classmethod
    def kou(cls, lam, p, lam_plus, lam_minus):
        return cls('kou', lam=float(lam), p=float(p), lam_plus=float(lam_plus), lam_minus=float(lam_minus))

    @classmethod
    def variance_gamma(cls, theta, sigma, kappa):
        return cls('vg', theta=float(theta), sigma=float(sigma), kappa=float(kappa))

    @classmethod
    def nig(cls, theta, sigma, kappa):
        return cls('nig', theta=float(theta), sigma=float(sigma), kappa=float(kappa))

    @classmethod
    def null(cls):
        """The zero measure, represented as a Merton measure without jumps."""
        return cls('merton', lam=0.0, m=0.0, delta=1.0)

    @property
    def is_null(self):
        return self.family in ('merton', 'kou') and self.lam == 0.0

    @property
    def A(self):
        return self.theta / self.sigma ** 2

    @property
    def B(self):
        if self.family == 'vg':
            return math.sqrt(self.theta ** 2 + 2.0 * self.sigma ** 2 / self.kappa) / self.sigma ** 2
        return math.sqrt(self.theta ** 2 + self.sigma ** 2 / self.kappa) / self.sigma ** 2

    @property
    def C(self):
        root = math.sqrt(self.theta ** 2 + self.sigma ** 2 / self.kappa)
        return root / (2.0 * math.pi * self.sigma * math.sqrt(self.kappa))

    def to_dict(self):
        items = {'family': self.family}
        for key, attr in SPEC_KEYS[self.family]:
            items[key] = repr(getattr(self, attr))
        return items

    @classmethod
    def from_dict(cls, items):
        family = str(items.get('family', '')).strip().lower()
        if family not in SPEC_KEYS:
            raise ParameterDomainError(f"unknown Levy family '{family}', expected one of {FAMILIES}")
        kwargs = {}
        for key, attr in SPEC_KEYS[family]:
            if key not in items:
                raise ParameterDomainError(f"{family}: missing parameter '{key}'")
            try:
                kwargs[attr] = float(items[key])
            except (TypeError, ValueError):
                raise ParameterDomainError(f"{family}: parameter '{key}' must be a number, got {items[key]!r}")
        return cls(family, **kwargs)


@dataclass(frozen=True)
class AdmissibilityShape:
    """Envelope h(z) <= C0 |z|^-alpha exp(-D|z| - mu_shape z^2)."""
    alpha: float
    D: float
    mu_shape: float
    C0: float

    def __post_init__(self):
        if self.alpha < 0 or self.mu_shape < 0:
            raise ParameterDomainError(f"admissibility shape needs alpha >= 0 and mu_shape >= 0, got {self}")
        if not self.C0 > 0:
            raise ParameterDomainError(f"admissibility shape needs C0 > 0, got {self.C0}")

    @property
    def decays(self):
        return self.mu_shape > 0 or self.D > 0

    def envelope(self, z):
        z = np.abs(np.asarray(z, dtype=float))
        return self.C0 * z ** (-self.alpha) * np.exp(-self.D * z - self.mu_shape * z * z)


class AdmissibilityReport(NamedTuple):
    admissible: bool
    C0: float
    decays: bool
    worst_point: float


class QuadratureResult(NamedTuple):
    value: float
    error: float


@dataclass(frozen=True)
class QuadratureRule:
    """
    Fixed composite Gauss-Legendre rule with the density folded into the
    weights. ``z, w`` cover eps <= |z| <= Z, ``inner_z, inner_w`` cover
    0 < |z| < eps.
    """
    z: np.ndarray
    w: np.ndarray
    inner_z: np.ndarray
    inner_w: np.ndarray
    truncation: float
    inner_cut: float

    @property
    def all_z(self):
        return np.concatenate([self.inner_z, self.z])

    @property
    def all_w(self):
        return np.concatenate([self.inner_w, self.w])

    def integrate(self, values_outer, values_inner=None):
        total = float(np.dot(self.w, values_outer))
        if values_inner is not None:
            total += float(np.dot(self.inner_w, values_inner))
        return total


def _density(spec, z):
    if spec.family == 'merton':
        if spec.lam == 0.0:
            return np.zeros_like(z)
        return spec.lam / (math.sqrt(2.0 * math.pi) * spec.delta) * np.exp(-0.5 * ((z - spec.m) / spec.delta) ** 2)
    if spec.family == 'kou':
        up = spec.lam * spec.p * spec.lam_plus * np.exp(-spec.lam_plus * np.abs(z))
        down = spec.lam * (1.0 - spec.p) * spec.lam_minus * np.exp(-spec.lam_minus * np.abs(z))
        return np.where(z > 0, up, down)
    az = np.abs(z)
    if spec.family == 'vg':
        return np.exp(spec.A * z - spec.B * az) / (spec.kappa * az)
    # K1(B|z|) = k1e(B|z|) exp(-B|z|) keeps the exponent combined
    return spec.C / az * np.exp(spec.A * z - spec.B * az) * special.k1e(spec.B * az)


def density(spec, z):
    """
    Levy density h(z).

    :param spec: Levy measure
    :type spec: LevyMeasureSpec
    :param z: jump size(s), nonzero
    :type z: float or numpy array
    :return: h(z) >= 0, same shape as z
    """
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ParameterDomainError("density: z must be finite")
    if np.any(arr == 0.0):
        raise ParameterDomainError("density: z = 0 is excluded, the density may be singular there")
    values = _density(spec, arr)
    if np.ndim(z) == 0:
        return float(values)
    return values


def admissibility_shape(spec, truncation=DEFAULT_TRUNCATION):
    """
    Shape parameters of the growth envelope with the tightest C0 on
    |z| <= truncation.
    """
    tiny = np.finfo(float).tiny
    if spec.family == 'merton':
        mu_shape = 1.0 / (2.0 * spec.delta ** 2)
        peak = spec.lam / (math.sqrt(2.0 * math.pi) * spec.delta)
        # h(z) exp(mu z^2) = peak * exp((2 m z - m^2) / (2 delta^2)), largest at z = sign(m) Z
        C0 = peak * math.exp((2.0 * truncation * abs(spec.m) - spec.m ** 2) * mu_shape)
        return AdmissibilityShape(alpha=0.0, D=0.0, mu_shape=mu_shape, C0=max(C0, tiny))
    if spec.family == 'kou':
        C0 = spec.lam * max(spec.p * spec.lam_plus, (1.0 - spec.p) * spec.lam_minus)
        return AdmissibilityShape(alpha=0.0, D=min(spec.lam_minus, spec.lam_plus), mu_shape=0.0,
                                  C0=max(C0, tiny))
    D = spec.B - abs(spec.A)
    if spec.family == 'vg':
        return AdmissibilityShape(alpha=1.0, D=D, mu_shape=0.0, C0=1.0 / spec.kappa)
    # nig: h z^2 e^{D|z|} = C |z| exp(A z - |A||z|) k1e(B|z|), tends to C/B at 0
    grid = np.concatenate([np.geomspace(1e-12, 1.0, 2001), np.linspace(1.0, truncation, 4001)])
    best = spec.C / spec.B
    for sign in (1.0, -1.0):
        z = sign * grid
        ratio = spec.C * grid * np.exp(spec.A * z - abs(spec.A) * grid) * special.k1e(spec.B * grid)
        best = max(best, float(np.max(ratio)))
    return AdmissibilityShape(alpha=2.0, D=D, mu_shape=0.0, C0=best * (1.0 + 1e-9))


def _log_density(spec, z):
    az = np.abs(z)
    with np.errstate(divide='ignore'):
        if spec.family == 'merton':
            if spec.lam == 0.0:
                return np.full_like(z, -np.inf)
            peak = math.log(spec.lam / (math.sqrt(2.0 * math.pi) * spec.delta))
            return peak - 0.5 * ((z - spec.m) / spec.delta) ** 2
        if spec.family == 'kou':
            up = np.log(spec.lam * spec.p * spec.lam_plus) - spec.lam_plus * az
            down = np.log(spec.lam * (1.0 - spec.p) * spec.lam_minus) - spec.lam_minus * az
            return np.where(z > 0, up, down)
        if spec.family == 'vg':
            return spec.A * z - spec.B * az - np.log(spec.kappa * az)
        return math.log(spec.C) - np.log(az) + spec.A * z - spec.B * az + np.log(special.k1e(spec.B * az))


def check_admissible(spec, shape, sample_points):
    """
    Compare h against the envelope of ``shape`` at the sample points.

    :return: AdmissibilityReport with the tightest C0 the samples require
    """
    z = np.asarray(sample_points, dtype=float).ravel()
    if z.size == 0:
        raise ParameterDomainError("check_admissible: empty sample set")
    if not np.all(np.isfinite(z)) or np.any(z == 0.0):
        raise ParameterDomainError("check_admissible: sample points must be finite and nonzero")
    # log space, the Gaussian tails underflow long before the truncation point
    az = np.abs(z)
    log_ratio = _log_density(spec, z) + shape.alpha * np.log(az) + shape.D * az + shape.mu_shape * z * z
    ratio = np.exp(log_ratio)
    worst = int(np.argmax(ratio))
    tightest = float(ratio[worst])
    admissible = bool(tightest <= shape.C0 * (1.0 + 1e-9))
    return AdmissibilityReport(admissible=admissible, C0=tightest, decays=shape.decays,
                               worst_point=float(z[worst]))


def _breakpoints(inner_cut, truncation):
    """Positive panel breakpoints: geometric up to 1, unit panels beyond."""
    levels = max(2, int(math.ceil(math.log2(1.0 / inner_cut))) + 1) if inner_cut < 1.0 else 2
    points = list(np.geomspace(inner_cut, 1.0, levels)) if inner_cut < 1.0 else [inner_cut]
    points += list(np.arange(2.0, truncation, 1.0)) + [truncation]
    return np.unique(np.asarray([p for p in points if inner_cut <= p <= truncation]))


def _gl_panels(f, a, b, rule):
    """Gauss-Legendre rule on each panel [a_k, b_k], vectorized over panels."""
    nodes, weights = rule
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    z = mid[:, None] + half[:, None] * nodes[None, :]
    return half * np.sum(weights[None, :] * f(z), axis=1)


def _adaptive(f, edges, rel_tol, max_levels, abs_floor=1e-15):
    a, b = edges[:-1].astype(float), edges[1:].astype(float)
    span = float(np.sum(b - a)) or 1.0
    total, error = 0.0, 0.0
    reference = None
    for _ in range(max_levels + 1):
        coarse = _gl_panels(f, a, b, _GL_COARSE)
        mid = 0.5 * (a + b)
        fine = _gl_panels(f, a, mid, _GL_COARSE) + _gl_panels(f, mid, b, _GL_COARSE)
        if reference is None:
            reference = abs(total + float(np.sum(fine)))
        local = np.abs(fine - coarse)
        budget = max(rel_tol * reference, abs_floor) * (b - a) / span
        done = local <= budget
        total += float(np.sum(fine[done]))
        error += float(np.sum(local[done]))
        if np.all(done):
            return total, error
        a, b = a[~done], b[~done]
        mid = 0.5 * (a + b)
        a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
    estimate = total + float(np.sum(_gl_panels(f, a, b, _GL_FINE)))
    raise QuadratureError(
        f"adaptive quadrature did not converge after {max_levels} levels ({a.size} panels open)",
        last_estimate=estimate)


def compensated_integral(spec, g, truncation=DEFAULT_TRUNCATION, inner_cut=DEFAULT_INNER_CUT,
                         rel_tol=DEFAULT_REL_TOL, max_levels=DEFAULT_MAX_LEVELS):
    """
    Integral of g(z) h(z) over |z| <= truncation for g = O(z^2) at 0.

    The inner interval (-eps, eps) is replaced by 1/2 g''(0) * int z^2 h dz.

    :param g: vectorized integrand
    :type g: callable
    :return: QuadratureResult(value, error)
    """
    if truncation <= 0 or inner_cut <= 0 or inner_cut >= truncation:
        raise ParameterDomainError(f"need 0 < inner_cut < truncation, got {inner_cut}, {truncation}")
    if spec.is_null:
        return QuadratureResult(0.0, 0.0)

    def integrand(z):
        return g(z) * _density(spec, z)

    positive = _breakpoints(inner_cut, truncation)
    # (-eps, eps) is not a panel, the two sides are integrated separately
    outer_neg, err_neg = _adaptive(integrand, -positive[::-1], rel_tol, max_levels)
    outer_pos, err_pos = _adaptive(integrand, positive, rel_tol, max_levels)

    eta = inner_cut
    g2 = (g(np.array([eta]))[0] - 2.0 * g(np.array([0.0]))[0] + g(np.array([-eta]))[0]) / eta ** 2
    inner = 0.0
    inner_err = 0.0
    if g2 != 0.0:
        def moment(z):
            return z * z * _density(spec, z)
        m_neg, e_neg = _adaptive(moment, np.array([-inner_cut, 0.0]), rel_tol, max_levels)
        m_pos, e_pos = _adaptive(moment, np.array([0.0, inner_cut]), rel_tol, max_levels)
        inner = 0.5 * g2 * (m_neg + m_pos)
        inner_err = 0.5 * abs(g2) * (e_neg + e_pos)
    return QuadratureResult(outer_neg + outer_pos + inner, err_neg + err_pos + inner_err)


def quadrature_rule(spec, truncation=DEFAULT_TRUNCATION, inner_cut=DEFAULT_INNER_CUT,
                    nodes_per_panel=8, panel_width=0.25, inner_nodes=8):
    """
    Fixed composite rule used where the integrand depends on unknowns
    (weight tables, hedging moments). Panels are geometric from eps to 1 and
    of width ``panel_width`` beyond.
    """
    if truncation <= 0 or inner_cut <= 0 or inner_cut >= truncation:
        raise ParameterDomainError(f"need 0 < inner_cut < truncation, got {inner_cut}, {truncation}")
    empty = np.zeros(0)
    if spec.is_null:
        return QuadratureRule(empty, empty, empty, empty, truncation, inner_cut)
    nodes, weights = leggauss(nodes_per_panel)
    lower = list(np.geomspace(inner_cut, 1.0, max(2, int(math.ceil(math.log2(1.0 / inner_cut))) + 1))) \
        if inner_cut < 1.0 else [inner_cut]
    count = max(1, int(math.ceil((truncation - lower[-1]) / panel_width)))
    upper = list(np.linspace(lower[-1], truncation, count + 1)[1:]) if truncation > lower[-1] else []
    positive = np.asarray(lower + upper)
    a, b = positive[:-1], positive[1:]
    half, mid = 0.5 * (b - a), 0.5 * (b + a)
    zp = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wp = (half[:, None] * weights[None, :]).ravel()
    z = np.concatenate([-zp[::-1], zp])
    w = np.concatenate([wp[::-1], wp]) * _density(spec, z)

    inodes, iweights = leggauss(inner_nodes)
    zi = 0.5 * inner_cut * (inodes + 1.0)
    wi = 0.5 * inner_cut * iweights
    inner_z = np.concatenate([-zi[::-1], zi])
    inner_w = np.concatenate([wi[::-1], wi]) * _density(spec, inner_z)
    return QuadratureRule(z, w, inner_z, inner_w, truncation, inner_cut)


def _compensator_integrand(z):
    return np.expm1(z) - z * (np.abs(z) <= 1.0)


def martingale_drift(spec, sigma_diffusion, truncation=DEFAULT_TRUNCATION, inner_cut=DEFAULT_INNER_CUT):
    """
    gamma = -sigma^2/2 - int (e^z - 1 - z 1_{|z|<=1}) nu(dz), the drift that
    makes the discounted price a martingale.
    """
    if sigma_diffusion < 0:
        raise ParameterDomainError(f"diffusion volatility must be >= 0, got {sigma_diffusion}")
    integral = compensated_integral(spec, _compensator_integrand, truncation=truncation, inner_cut=inner_cut)
    return -0.5 * sigma_diffusion ** 2 - integral.value


def jump_compensator(spec, truncation=DEFAULT_TRUNCATION, inner_cut=DEFAULT_INNER_CUT):
    """int (e^z - 1 - z) nu(dz): the drift correction for an unshifted jump."""
    return compensated_integral(spec, lambda z: np.expm1(z) - z, truncation=truncation,
                                inner_cut=inner_cut).value


def levy_variance(spec, truncation=DEFAULT_TRUNCATION, inner_cut=DEFAULT_INNER_CUT):
    return compensated_integral(spec, lambda z: z * z, truncation=truncation, inner_cut=inner_cut).value


def require_family(spec, family):
    if spec.family != family:
        raise FamilyMismatchError(f"expected a {family} measure, got {spec.family}")
