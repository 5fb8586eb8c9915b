"""Profile calculus: transforms, doubling, regularization, product constants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heatbound.grammar import parse_profile
from heatbound.profiles import (
    DomainError, DoublingFailure, MonotonicityError, NashRate,
    TabulatedProfile, UltracontractivityError, check_doubling,
    check_regular_class, partial_product, phi_from_theta, product_constant,
    regularize, theta_from_phi, theta_star, theta_tilde,
)


def phi_pow(a: float):
    return parse_profile(f"pow({a})")


# -- theta_from_phi -----------------------------------------------------------

def test_rate_of_inverse_power_profile():
    assert theta_from_phi(phi_pow(-1), 2.0) == pytest.approx(4.0, rel=1e-12)


def test_rate_of_square_root_profile():
    assert theta_from_phi(phi_pow(-0.5), 1.0) == pytest.approx(0.5, rel=1e-12)


def test_rate_unwinds_to_derivative_at_sample_point():
    phi = parse_profile("pow(-1.5)*expg(1,1)")
    t0 = 0.7
    r = phi.value(t0)
    assert theta_from_phi(phi, r) == pytest.approx(-phi.derivative(t0), rel=1e-9)


def test_rate_rejects_level_outside_range():
    phi = TabulatedProfile([1.0, 2.0, 4.0], [4.0, 2.0, 1.0])
    with pytest.raises(DomainError):
        theta_from_phi(phi, 100.0)


# -- phi_from_theta -----------------------------------------------------------

def test_profile_of_quadratic_rate_is_inverse_time():
    theta = NashRate.from_profile(phi_pow(-1))
    phi = phi_from_theta(theta, t_lo=1e-4, t_hi=1e4)
    for t in np.geomspace(1e-3, 1e3, 40):
        assert phi.value(t) == pytest.approx(1.0 / t, rel=1e-6)


def test_profile_of_cubic_rate_is_inverse_square_root():
    theta = NashRate.from_profile(phi_pow(-0.5))
    phi = phi_from_theta(theta, t_lo=1e-4, t_hi=1e4)
    for t in np.geomspace(1e-3, 1e3, 40):
        assert phi.value(t) == pytest.approx(t ** -0.5, rel=1e-6)


def test_round_trip_identity_on_expression_families():
    # the exponential family's grid stops where phi(t) leaves the normal
    # float range; below ~1e-300 the reference value itself loses precision
    grids = {"pow(-1.5)*expg(1,1)": (5e-4, 5e2)}
    for spec in ("pow(-1)", "pow(-0.5)", "pow(-1)*logp(1,2)",
                 "pow(-1.5)*expg(1,1)"):
        phi = parse_profile(spec)
        back = phi_from_theta(NashRate.from_profile(phi), t_lo=1e-4, t_hi=1e4)
        lo, hi = grids.get(spec, (1e-3, 1e3))
        for t in np.geomspace(lo, hi, 30):
            assert back.value(t) == pytest.approx(phi.value(t), rel=1e-6), spec


def test_divergent_tail_rate_is_rejected():
    # theta(s) = s: int^inf ds/s diverges, no decay profile exists
    theta = NashRate.from_table(np.geomspace(1e-6, 1e6, 40),
                                np.geomspace(1e-6, 1e6, 40))
    with pytest.raises(UltracontractivityError):
        phi_from_theta(theta)


# -- theta_tilde --------------------------------------------------------------

def test_envelope_rate_inverse_power_closed_form():
    phi = phi_pow(-1)
    assert theta_tilde(phi, 1.0) == pytest.approx(1.0 / math.e, rel=1e-9)
    assert theta_tilde(phi, 2.0) == pytest.approx(4.0 / math.e, rel=1e-9)


def test_envelope_to_rate_ratio_constant_for_inverse_power():
    phi = phi_pow(-1)
    for r in np.geomspace(1e-2, 1e2, 17):
        ratio = theta_tilde(phi, float(r)) / theta_from_phi(phi, float(r))
        assert ratio == pytest.approx(1.0 / math.e, rel=1e-8)


def test_envelope_rate_sentinels_on_tabulated_profile():
    phi = TabulatedProfile([1.0, 2.0, 4.0, 8.0], [8.0, 4.0, 2.0, 1.0])
    assert theta_tilde(phi, 0.5) == 0.0          # below the terminal level
    assert theta_tilde(phi, 100.0) == math.inf   # above the initial level


def test_envelope_rate_midpoint_convexity():
    phi = phi_pow(-1)
    rs = np.geomspace(0.1, 10, 21)
    vals = np.array([theta_tilde(phi, float(r)) for r in rs])
    for i in range(len(rs) - 2):
        r_mid = 0.5 * (rs[i] + rs[i + 2])
        v_mid = theta_tilde(phi, float(r_mid))
        chord = 0.5 * (vals[i] + vals[i + 2])
        assert v_mid <= chord * (1 + 1e-9) + 1e-15


# -- theta_star ---------------------------------------------------------------

def test_simplified_rate_closed_forms():
    assert theta_star(phi_pow(-1), 3.0) == pytest.approx(9.0, rel=1e-12)
    assert theta_star(phi_pow(-0.5), 1.0) == pytest.approx(1.0, rel=1e-12)


def test_simplified_rate_sandwiches_rate():
    # theta and theta_* agree up to a single family-wide factor
    for spec in ("pow(-1)", "pow(-0.5)", "pow(-1.5)*expg(1,1)"):
        phi = parse_profile(spec)
        ratios = []
        for r in np.geomspace(1e-2, 1e2, 25):
            ratios.append(theta_from_phi(phi, float(r))
                          / theta_star(phi, float(r)))
        assert 0 < min(ratios) and max(ratios) / min(ratios) < 50


# -- doubling -----------------------------------------------------------------

def test_doubling_constants_for_powers():
    dc = check_doubling(phi_pow(-1))
    assert dc.C_d == pytest.approx(2.0, rel=1e-9)
    assert dc.eta_d == pytest.approx(1.0, abs=1e-9)
    dc = check_doubling(phi_pow(-0.5))
    assert dc.C_d == pytest.approx(math.sqrt(2), rel=1e-9)
    assert dc.eta_d == pytest.approx(0.5, abs=1e-9)


def test_doubling_fails_for_pure_exponential():
    phi = parse_profile("expg(1,1)")
    with pytest.raises(DoublingFailure):
        check_doubling(phi, grid=np.geomspace(1.0, 1e6, 512))


# -- product constant ---------------------------------------------------------

def test_product_constant_closed_form():
    C, c = product_constant(1.0, 1.0, 43)
    assert C == pytest.approx(43 ** 2 * 43 / 42, rel=1e-12)
    assert C == pytest.approx(1893.0238095238095, rel=1e-12)
    assert c == 1.0
    C4, _ = product_constant(1.0, 1.0, 4)
    assert C4 == pytest.approx(16 * 4 / 3, rel=1e-12)


def test_product_constant_rejects_small_lambda():
    with pytest.raises(DomainError):
        product_constant(1.0, 1.0, 2)


def test_partial_product_bounded_by_constant():
    phi = phi_pow(-1)
    C, _ = product_constant(2.0, 1.0, 4)
    for t in (0.1, 1.0, 10.0):
        assert partial_product(phi, 4, t, k_max=40) <= C * phi.value(t)


# -- regularize ---------------------------------------------------------------

def test_regularize_inverse_power():
    res = regularize(phi_pow(-1))
    assert 1.0 <= res.c <= 2.0
    assert res.b1 > 0
    assert res.b2 <= 2.0 + 1e-9


def test_regularized_profile_passes_class_check():
    res = regularize(phi_pow(-1))
    rep = check_regular_class(res.phi_bar)
    assert rep.class_R


# -- regular class ------------------------------------------------------------

def test_square_root_profile_is_regular():
    rep = check_regular_class(phi_pow(-0.5))
    assert rep.item_i and rep.item_ii and rep.item_iii and rep.class_R


def test_power_exponential_profile_is_regular():
    rep = check_regular_class(parse_profile("pow(-1.5)*expg(1,1)"))
    assert rep.class_R


def test_increasing_profile_is_rejected():
    with pytest.raises(MonotonicityError):
        parse_profile("pow(0.5)")


# -- expression invariants ----------------------------------------------------

def test_derivative_matches_central_differences():
    phi = parse_profile("pow(-1.5)*expg(1,1)")
    for t in np.geomspace(1e-2, 1e2, 33):
        h = float(t) * 1e-6
        fd = (phi.value(t + h) - phi.value(t - h)) / (2 * h)
        assert phi.derivative(float(t)) == pytest.approx(fd, rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=-3.0, max_value=-0.1),
       st.floats(min_value=1e-4, max_value=1e4))
def test_inverse_round_trip_on_powers(a, r):
    phi = phi_pow(a)
    assert phi.value(phi.inverse(r)) == pytest.approx(r, rel=1e-9)


def test_tabulated_interpolation_preserves_power_laws():
    nodes = np.geomspace(1e-4, 1e4, 33)
    tab = TabulatedProfile(nodes, 1.0 / nodes)
    for t in np.geomspace(1e-3, 1e3, 50):
        assert tab.value(float(t)) == pytest.approx(1.0 / t, rel=1e-12)
    dc = check_doubling(tab, grid=np.geomspace(1e-3, 1e3, 512))
    assert dc.C_d == pytest.approx(2.0, rel=1e-9)
