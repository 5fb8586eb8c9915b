"""Tilted semigroup bounds: constants, certificates, envelopes, ball uniformity."""

import dataclasses
import math

import numpy as np
import pytest

from heatbound import parse_profile
from heatbound.davies import (
    BallProfile, ball_certificate, beta_doubling_constant,
    beta_integral_constant, beta_profile, build_psi_family, constants_detail,
    davies_constants, davies_lambda, dirichlet_ball_bound, envelope_log_minimum,
    feasible_psi_distance, gaussian_envelope, log_gaussian_envelope,
    offdiag_bound, scaled_ray_family, stable_like_Phi, stable_like_pipeline,
    verify_offdiag,
)
from heatbound.forms import FiniteDirichletForm, Perturbation, lambda_sq
from heatbound.models import PowerScaling, cycle, torus, two_state
from heatbound.nash_verify import PremiseNotCertified, fit_delta
from heatbound.profiles import NashRate, ProfileError
from heatbound.semigroup import SpectralKernel, heat_kernel, onediag_norm


def window_profile(form, t_grid):
    """Fitted square-root profile with the smallest constant valid on the grid."""
    sk = SpectralKernel(form)
    a = max(math.sqrt(t) * onediag_norm(sk, t) for t in t_grid)
    return parse_profile(f"{a}*pow(-0.5)")


# -- lambda and constants --------------------------------------------------------

def test_lambda_reference_value():
    assert davies_lambda(1.0, 10.0, 2.0) == 43


def test_lambda_unit_case():
    assert davies_lambda(1.0, 1.0, 1.0) == 4


def test_lambda_relaxes_to_integer_ceiling():
    # for huge eps only lam > 2^eta binds
    assert davies_lambda(100.0, 1.0, 2.0) == 5


def test_lambda_monotone_in_eps():
    assert davies_lambda(3.0, 10.0, 2.0) <= davies_lambda(1.0, 10.0, 2.0)


def test_lambda_rejects_bad_arguments():
    with pytest.raises(ValueError):
        davies_lambda(0.0, 10.0, 2.0)
    with pytest.raises(ValueError):
        davies_lambda(1.0, 0.5, 2.0)
    with pytest.raises(ValueError):
        davies_lambda(1.0, 10.0, 0.0)


def test_constants_closed_form_jump_mode():
    # phi = 1/t doubles with C_d = 2, eta_d = 1; jump admissibility gives
    # lambda = 43 and C_eps = 43^2 * (43/42), c_eps = s
    C_eps, c_eps = davies_constants(parse_profile("pow(-1)"), 1.0, 0.5)
    assert C_eps == pytest.approx(43.0 ** 2 * 43.0 / 42.0, rel=1e-9)
    assert c_eps == pytest.approx(0.5, rel=1e-12)


def test_constants_closed_form_local_mode():
    # local admissibility triple (1,1,1): lambda = 4, C_eps = 4^2 * 4/3
    d = constants_detail(parse_profile("pow(-1)"), 1.0, 0.5, mode="local")
    assert d["lambda"] == 4
    assert d["C_eps"] == pytest.approx(64.0 / 3.0, rel=1e-9)
    assert d["c_eps"] == pytest.approx(1.0, rel=1e-12)


def test_constants_detail_reports_inputs():
    d = constants_detail(parse_profile("pow(-1)"), 2.0, 0.25)
    assert d["eps"] == 2.0 and d["s"] == 0.25 and d["mode"] == "jump"
    assert d["C_adm"] == pytest.approx(5.0 / 0.75, rel=1e-12)


# -- grid verification --------------------------------------------------------------

@pytest.fixture(scope="module")
def cycle16_cert():
    form = cycle(16)
    ts = np.geomspace(0.05, 4.0, 24)
    phi = window_profile(form, ts)
    delta = fit_delta(form, NashRate.from_profile(phi))
    cert = verify_offdiag(form, phi, delta, eps=1.0, s=0.5, t_grid=ts, budget=400)
    return form, ts, phi, delta, cert


def test_verified_certificate_passes(cycle16_cert):
    _, _, _, _, cert = cycle16_cert
    assert cert.passed
    assert cert.worst_log_margin > 0
    assert cert.lambda_inequality() < 1.0 + cert.epsilon


def test_broken_constant_fails_with_witness(cycle16_cert):
    form, ts, phi, delta, _ = cycle16_cert
    bad = verify_offdiag(form, phi, delta, eps=1.0, s=0.5, t_grid=ts,
                         budget=400, C_scale=1e-3)
    assert not bad.passed
    assert bad.witness is not None
    assert bad.worst_log_margin < 0
    assert any("fault injection" in note for note in bad.notes)


def test_uncertified_premise_refused(cycle16_cert):
    form, ts, phi, _, _ = cycle16_cert
    # constants defeat delta = 0 on a chain without killing
    with pytest.raises(PremiseNotCertified):
        verify_offdiag(form, phi, 0.0, eps=1.0, s=0.5, t_grid=ts, budget=400)


def test_offdiag_bound_formula(cycle16_cert):
    _, _, _, _, cert = cycle16_cert
    psi = Perturbation(np.linspace(0.0, 1.5, 16))
    lam2 = lambda_sq(cycle(16), psi)
    t = 0.7
    got = offdiag_bound(cert, psi, t, 2, 11, lam2)
    want = (cert.C_eps * cert.phi.value(cert.c_eps * t) * math.exp(cert.delta * t)
            * math.exp(-abs(psi.psi[11] - psi.psi[2]) + 2.0 * lam2 * t))
    assert got == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError):
        offdiag_bound(cert, psi, 0.0, 2, 11, lam2)


def test_certificate_bound_dominates_tilted_kernel(cycle16_cert):
    # the inequality the certificate asserts, replayed directly
    form, ts, _, _, cert = cycle16_cert
    sk = SpectralKernel(form)
    psi = build_psi_family(form)[5]
    lam2 = lambda_sq(form, psi)
    for t in ts[::6]:
        P = sk.kernel(float(t))
        for x, y in ((0, 8), (3, 12)):
            exact = math.exp(psi.psi[x] - psi.psi[y]) * P[y, x]
            assert exact <= offdiag_bound(cert, psi, float(t), x, y, lam2) * (1 + 1e-9)


def test_psi_family_size_and_type():
    fam = build_psi_family(cycle(16))
    assert len(fam) == 33     # 8 slopes x 2 centres x 2 cone signs, plus zero
    assert all(isinstance(p, Perturbation) for p in fam)
    assert any(not p.psi.any() for p in fam)


# -- feasible distance -----------------------------------------------------------------

def test_distance_same_point_is_zero():
    assert feasible_psi_distance(cycle(8), 3, 3)[0] == 0.0


def test_distance_adjacent_unit_edge():
    # sup psi(y) - psi(x) over unit-size tilts on one edge: log(1 + sqrt 2)
    d, psi = feasible_psi_distance(two_state(), 0, 1)
    assert d == pytest.approx(math.log(1.0 + math.sqrt(2.0)), abs=1e-9)
    assert lambda_sq(two_state(), psi) <= 1.0 + 1e-9


def test_distance_symmetric_in_endpoints():
    a, _ = feasible_psi_distance(cycle(12), 0, 5, budget=800, seed=1)
    b, _ = feasible_psi_distance(cycle(12), 5, 0, budget=800, seed=1)
    assert a == pytest.approx(b, rel=1e-6)


def test_distance_bounded_by_edge_count():
    # each unit edge contributes at most log(1 + sqrt 2) of feasible drop
    d, psi = feasible_psi_distance(cycle(12), 0, 6, budget=800)
    assert d <= 6.0 * math.log(1.0 + math.sqrt(2.0)) + 1e-9
    assert d > 3.0    # and the optimizer gets within shouting distance
    assert lambda_sq(cycle(12), psi) <= 1.0 + 1e-9


def test_distance_infinite_across_components():
    c = np.zeros((4, 4))
    c[0, 1] = c[1, 0] = 1.0
    c[2, 3] = c[3, 2] = 1.0
    disc = FiniteDirichletForm(m=np.ones(4), c=c)
    d, psi = feasible_psi_distance(disc, 0, 3, budget=200)
    assert math.isinf(d)
    assert np.all(np.isfinite(psi.psi))


# -- gaussian envelope ------------------------------------------------------------------

def test_envelope_log_consistency(cycle16_cert):
    _, _, _, _, cert = cycle16_cert
    for t in (0.5, 2.0, 9.0):
        assert gaussian_envelope(cert, 5.0, t) == pytest.approx(
            math.exp(log_gaussian_envelope(cert, 5.0, t)), rel=1e-12)
    with pytest.raises(ValueError):
        gaussian_envelope(cert, 5.0, 0.0)


def test_envelope_minimum_location(cycle16_cert):
    _, _, _, _, cert = cycle16_cert
    grid = np.geomspace(0.2, 20.0, 200)
    t_star, v_star = envelope_log_minimum(cert, 6.0, grid)
    vals = [log_gaussian_envelope(cert, 6.0, float(t)) for t in grid]
    assert v_star == pytest.approx(min(vals), rel=1e-12)
    assert t_star in grid


def test_scaled_rays_follow_optimal_scaling():
    psi_star = Perturbation(np.linspace(0.0, 2.0, 8), name="ray")
    grid = [1.0, 2.0, 4.0]
    fam = scaled_ray_family(psi_star, d_hat=4.0, eps=1.0, t_grid=grid)
    assert len(fam) == 3
    for t, p in zip(grid, fam):
        mu = 4.0 / (4.0 * t)
        np.testing.assert_allclose(p.psi, mu * psi_star.psi)


def test_envelope_dominates_exact_kernel_in_window(cycle16_cert):
    # two-point bound at the antipodal pair, inside the window where the
    # optimal ray scaling is feasible (mu <= 1 near t >= d_hat / 4)
    form, _, _, _, cert = cycle16_cert
    d_hat, _ = feasible_psi_distance(form, 0, 8, budget=800)
    sk = SpectralKernel(form)
    for t in np.geomspace(2.0, 12.0, 8):
        exact = heat_kernel(sk, float(t))[0, 8]
        assert log_gaussian_envelope(cert, d_hat, float(t)) >= math.log(exact)


# -- volume scaling ---------------------------------------------------------------------

def test_ball_profile_from_form_verifies():
    bp = BallProfile.from_form(cycle(32), phi_scaling=lambda r: r * r)
    assert bp.verify(cycle(32)) == []
    assert 0 < bp.d1 <= bp.d2
    assert bp.C1 <= bp.C2
    assert bp.C3 >= 1.0


def test_ball_profile_validation():
    bp = BallProfile.from_form(cycle(16), phi_scaling=lambda r: r * r)
    with pytest.raises(ValueError):
        dataclasses.replace(bp, d1=bp.d2 + 1.0)
    with pytest.raises(ValueError):
        dataclasses.replace(bp, C2=bp.C1 / 2.0)
    with pytest.raises(ValueError):
        dataclasses.replace(bp, C3=0.5)


def test_tampered_profile_fails_verification():
    # a too-small upper volume exponent breaks V(x,R)/V(x,r) <= C2 (R/r)^d2
    form = cycle(16)
    bp = BallProfile.from_form(form, phi_scaling=lambda r: r * r)
    assert dataclasses.replace(bp, d2=0.1).verify(form) != []


def test_beta_profile_monotone_in_outer_radius():
    bp = BallProfile.from_form(cycle(32), phi_scaling=lambda r: r * r)
    vals = [beta_profile(bp, R, 2.0) for R in (4.0, 8.0, 16.0)]
    assert vals[0] < vals[1] < vals[2]
    with pytest.raises(ValueError):
        beta_profile(bp, 4.0, 0.0)


def test_beta_constants_closed_forms():
    bp = BallProfile.from_form(cycle(16), phi_scaling=lambda r: r * r)
    unit = dataclasses.replace(bp, C_star=1.0, beta1=1.0, d2=2.0)
    mult, expo = beta_doubling_constant(unit)
    assert mult == pytest.approx(1.0)
    assert expo == pytest.approx(2.0)
    assert beta_integral_constant(unit) == pytest.approx(
        1.0 / (1.0 - 2.0 ** -0.5), rel=1e-12)


def test_single_constant_serves_all_balls():
    form = torus(32, 1)
    bp = BallProfile.from_form(form, phi_scaling=lambda r: r * r)
    cert = ball_certificate(form, bp, eps=1.0)
    assert cert.C_eps is None
    reports = [dirichlet_ball_bound(form, bp, x0=0, R=R, cert=cert)
               for R in (3.0, 6.0, 12.0)]
    assert all(r.passed for r in reports)
    assert [r.fitted_here for r in reports] == [True, False, False]
    assert len({r.C_eps_used for r in reports}) == 1


def test_ball_bound_rejects_empty_ball():
    form = torus(32, 1)
    bp = BallProfile.from_form(form, phi_scaling=lambda r: r * r)
    cert = ball_certificate(form, bp, eps=1.0)
    with pytest.raises(ValueError):
        dirichlet_ball_bound(form, bp, x0=0, R=0.0, cert=cert)


def test_tampered_scaling_constants_refused():
    form = torus(32, 1)
    bp = BallProfile.from_form(form, phi_scaling=lambda r: r * r)
    cert = ball_certificate(form, bp, eps=1.0)
    broken = dataclasses.replace(bp, C2=bp.C1)
    with pytest.raises(PremiseNotCertified):
        dirichlet_ball_bound(form, broken, x0=0, R=4.0, cert=cert)


# -- stable-like pipeline -----------------------------------------------------------------

def test_phi_linear_scaling_closed_form():
    for r in np.geomspace(0.1, 50.0, 20):
        assert stable_like_Phi(PowerScaling(1.0), r) == pytest.approx(
            r / 2.0, rel=1e-10)


def test_phi_square_root_scaling_closed_form():
    for r in np.geomspace(0.1, 50.0, 20):
        assert stable_like_Phi(PowerScaling(0.5), r) == pytest.approx(
            0.75 * math.sqrt(r), rel=1e-10)


def test_phi_rejects_inadmissible_scaling():
    with pytest.raises(ProfileError):
        stable_like_Phi(lambda r: r * r, 1.0)
    with pytest.raises(ValueError):
        stable_like_Phi(PowerScaling(1.0), -1.0)


def test_pipeline_on_small_chain():
    rep = stable_like_pipeline(64, 1, PowerScaling(1.0), c_bound=1.0, eps=1.0,
                               seed=0, pair_list=[(4, 12), (4, 20), (4, 34)])
    assert rep.passed
    assert rep.stability_ratio < 3.0
    assert rep.c11 > 0
    assert rep.worst_theorem_margin >= -1e-9
    assert rep.worst_chain_margin >= -1e-9
    assert rep.worst_additive_margin >= -1e-9
    assert rep.csv_rows
    assert len(rep.per_pair) == 3


def test_pipeline_rejects_bad_arguments():
    with pytest.raises(ValueError):
        stable_like_pipeline(64, 1, PowerScaling(1.0), c_bound=0.5)
