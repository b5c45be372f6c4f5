import math

import numpy as np
import pytest
from scipy import special

from levypide.errors import FamilyMismatchError, ParameterDomainError
from levypide.levy_measures import (AdmissibilityShape, LevyMeasureSpec, admissibility_shape, check_admissible,
                                    compensated_integral, density, jump_compensator, levy_variance, martingale_drift,
                                    quadrature_rule, require_family)

SAMPLES = np.concatenate([-np.geomspace(1e-4, 8.0, 300), np.geomspace(1e-4, 8.0, 300)])


def test_merton_density_peak(merton):
    assert density(merton, -0.2) == pytest.approx(0.1 / (math.sqrt(2.0 * math.pi) * 0.15), rel=1e-14)
    assert density(merton, -0.2) == pytest.approx(0.26596, abs=1e-5)


def test_vg_density_matches_formula(vg):
    z = np.array([-0.5, -0.01, 0.02, 0.3])
    expected = np.exp(vg.A * z - vg.B * np.abs(z)) / (vg.kappa * np.abs(z))
    np.testing.assert_allclose(density(vg, z), expected, rtol=1e-14)


def test_nig_density_uses_bessel_k1(nig):
    z = 0.3
    expected = nig.C / z * math.exp(nig.A * z) * special.k1(nig.B * z)
    assert density(nig, z) == pytest.approx(expected, rel=1e-12)


def test_kou_density_is_asymmetric(kou):
    assert density(kou, 0.1) == pytest.approx(1.0 * 0.4 * 10.0 * math.exp(-1.0), rel=1e-14)
    assert density(kou, -0.1) == pytest.approx(1.0 * 0.6 * 5.0 * math.exp(-0.5), rel=1e-14)


def test_density_rejects_zero(vg):
    with pytest.raises(ParameterDomainError):
        density(vg, 0.0)
    with pytest.raises(ParameterDomainError):
        density(vg, np.array([0.1, np.nan]))


def test_null_measure_has_zero_density():
    spec = LevyMeasureSpec.null()
    assert spec.is_null
    assert density(spec, 0.3) == 0.0
    assert levy_variance(spec) == 0.0


@pytest.mark.parametrize('kwargs', [
    dict(family='merton', lam=-0.1, delta=0.1),
    dict(family='merton', lam=0.1, delta=0.0),
    dict(family='kou', lam=1.0, p=1.5, lam_plus=3.0, lam_minus=2.0),
    dict(family='kou', lam=1.0, p=0.5, lam_plus=1.0, lam_minus=2.0),
    dict(family='vg', theta=2.0, sigma=0.2, kappa=1.0),
    dict(family='nig', theta=0.0, sigma=0.0, kappa=1.0),
    dict(family='cgmy'),
])
def test_invalid_parameters_raise(kwargs):
    with pytest.raises(ParameterDomainError):
        LevyMeasureSpec(**kwargs)


def test_dict_form(vg):
    items = vg.to_dict()
    assert items['family'] == 'vg'
    assert LevyMeasureSpec.from_dict(items) == vg
    with pytest.raises(ParameterDomainError):
        LevyMeasureSpec.from_dict({'family': 'merton', 'lambda': '0.1', 'm': '0'})
    with pytest.raises(ParameterDomainError):
        LevyMeasureSpec.from_dict({'family': 'merton', 'lambda': 'x', 'm': '0', 'delta': '0.1'})


def test_merton_moments_match_closed_form(merton):
    assert levy_variance(merton) == pytest.approx(0.1 * (0.04 + 0.0225), rel=1e-8)
    expected = 0.1 * (math.exp(-0.2 + 0.5 * 0.0225) - 1.0 + 0.2)
    assert jump_compensator(merton) == pytest.approx(expected, rel=1e-8)


def test_kou_variance(kou):
    expected = 1.0 * (0.4 * 2.0 / 100.0 + 0.6 * 2.0 / 25.0)
    assert levy_variance(kou) == pytest.approx(expected, rel=1e-8)


def test_vg_variance(vg):
    assert levy_variance(vg) == pytest.approx(0.23 ** 2 + 0.43 ** 2 * 0.27, rel=1e-6)


def test_nig_variance_with_printed_constant(nig):
    # C carries 2 pi, half the normalization of the subordinated process
    assert levy_variance(nig) == pytest.approx(0.5 * (0.2 ** 2 + 0.1 ** 2 * 0.5), rel=1e-6)


def test_martingale_drift(merton):
    assert martingale_drift(LevyMeasureSpec.null(), 0.2) == pytest.approx(-0.02, abs=1e-15)
    # the jump mass beyond |z| = 1 is below 1e-8 for this measure
    expected = -0.5 * 0.23 ** 2 - 0.1 * (math.exp(-0.2 + 0.5 * 0.0225) - 1.0 + 0.2)
    assert martingale_drift(merton, 0.23) == pytest.approx(expected, abs=1e-7)
    with pytest.raises(ParameterDomainError):
        martingale_drift(merton, -0.1)


def test_compensated_integral_checks_cuts(merton):
    with pytest.raises(ParameterDomainError):
        compensated_integral(merton, lambda z: z * z, truncation=1.0, inner_cut=2.0)


def test_quadrature_rule_reproduces_second_moment(merton, vg):
    for spec in (merton, vg):
        rule = quadrature_rule(spec)
        value = rule.integrate(rule.z ** 2, rule.inner_z ** 2)
        assert value == pytest.approx(levy_variance(spec), rel=1e-6)
    assert np.all(rule.w >= 0) and np.all(rule.inner_w >= 0)


def test_quadrature_rule_of_null_measure_is_empty():
    rule = quadrature_rule(LevyMeasureSpec.null())
    assert rule.z.size == 0 and rule.all_w.size == 0


@pytest.mark.parametrize('name', ['merton', 'kou', 'vg', 'nig'])
def test_families_are_admissible_against_their_shape(name, request):
    spec = request.getfixturevalue(name)
    shape = admissibility_shape(spec)
    report = check_admissible(spec, shape, SAMPLES)
    assert report.admissible
    assert report.decays
    assert report.C0 <= shape.C0 * (1.0 + 1e-9)


def test_shape_exponents(merton, vg, nig):
    assert admissibility_shape(merton).mu_shape == pytest.approx(1.0 / (2.0 * 0.15 ** 2))
    assert admissibility_shape(vg).alpha == 1.0
    assert admissibility_shape(vg).D == pytest.approx(vg.B - abs(vg.A))
    assert admissibility_shape(nig).alpha == 2.0


def test_too_small_constant_is_not_admissible(merton):
    shape = admissibility_shape(merton)
    tight = type(shape)(alpha=shape.alpha, D=shape.D, mu_shape=shape.mu_shape, C0=0.5 * shape.C0)
    report = check_admissible(merton, tight, SAMPLES)
    assert not report.admissible
    assert report.worst_point == pytest.approx(-8.0)


def test_require_family(merton):
    require_family(merton, 'merton')
    with pytest.raises(FamilyMismatchError):
        require_family(merton, 'vg')


@pytest.mark.parametrize('name', ['merton', 'kou', 'vg', 'nig'])
def test_martingale_condition(name, request):
    spec = request.getfixturevalue(name)
    gamma = martingale_drift(spec, 0.23)
    integral = compensated_integral(spec, lambda z: np.expm1(z) - z * (np.abs(z) <= 1.0)).value
    assert abs(0.5 * 0.23 ** 2 + gamma + integral) < 1e-7


def test_vg_exceeds_a_bounded_envelope(vg):
    bounded = AdmissibilityShape(alpha=0.0, D=admissibility_shape(vg).D, mu_shape=0.0, C0=1.0 / vg.kappa)
    report = check_admissible(vg, bounded, SAMPLES)
    assert not report.admissible
    assert abs(report.worst_point) == pytest.approx(1e-4)


def test_merton_is_bounded_by_its_peak(merton):
    peak = AdmissibilityShape(alpha=0.0, D=0.0, mu_shape=0.0, C0=float(density(merton, merton.m)))
    assert check_admissible(merton, peak, SAMPLES).admissible


@pytest.mark.parametrize('name', ['merton', 'kou'])
def test_compensated_integral_is_linear_in_g(name, request):
    spec = request.getfixturevalue(name)
    square = compensated_integral(spec, lambda z: z * z).value
    compensator = compensated_integral(spec, lambda z: np.expm1(z) - z).value
    combined = compensated_integral(spec, lambda z: 2.0 * z * z - 3.0 * (np.expm1(z) - z)).value
    assert combined == pytest.approx(2.0 * square - 3.0 * compensator, abs=1e-10)


def test_compensated_integral_is_linear_in_intensity(merton, kou):
    doubled_merton = LevyMeasureSpec.merton(lam=0.2, m=-0.2, delta=0.15)
    doubled_kou = LevyMeasureSpec.kou(lam=2.0, p=0.4, lam_plus=10.0, lam_minus=5.0)
    for spec, doubled in ((merton, doubled_merton), (kou, doubled_kou)):
        single = compensated_integral(spec, lambda z: z * z).value
        assert compensated_integral(doubled, lambda z: z * z).value == pytest.approx(2.0 * single, abs=1e-10)


def test_vg_integral_does_not_depend_on_the_far_tail(vg):
    near = compensated_integral(vg, lambda z: z * z, truncation=8.0).value
    far = compensated_integral(vg, lambda z: z * z, truncation=16.0).value
    assert np.isfinite(near)
    assert abs(far - near) < 1e-8
