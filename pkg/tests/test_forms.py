"""Dirichlet form container, energies, tilting sizes, restriction and truncation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heatbound.forms import (
    FiniteDirichletForm, FormError, Perturbation, admissibility_margin,
    carre_du_champ, energy, gamma_rho, lambda_sq, part_form, truncate,
)
from heatbound.models import cycle, path, two_state


def random_form(rng, n, killed=False):
    c = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.7), 1)
    c = c + c.T
    if not c.any():
        c[0, 1] = c[1, 0] = 1.0
    kill = rng.uniform(0.0, 2.0, n) * (rng.random(n) < 0.5) if killed else None
    return FiniteDirichletForm(m=rng.uniform(0.2, 3.0, n), c=c, kill=kill)


# -- container validation ------------------------------------------------------

def test_rejects_negative_conductance():
    with pytest.raises(FormError):
        FiniteDirichletForm(m=[1.0, 1.0], c=[[0.0, -1.0], [-1.0, 0.0]])


def test_rejects_asymmetric_conductance():
    with pytest.raises(FormError):
        FiniteDirichletForm(m=[1.0, 1.0], c=[[0.0, 1.0], [2.0, 0.0]])


def test_rejects_nonpositive_mass():
    with pytest.raises(FormError):
        FiniteDirichletForm(m=[1.0, 0.0], c=[[0.0, 1.0], [1.0, 0.0]])


def test_diagonal_conductance_is_rejected():
    with pytest.raises(FormError):
        FiniteDirichletForm(m=[1.0, 1.0], c=[[1.0, 1.0], [1.0, 0.0]])


def test_total_mass_and_norms():
    form = FiniteDirichletForm(m=[2.0, 3.0], c=[[0.0, 1.0], [1.0, 0.0]])
    assert form.total_mass() == pytest.approx(5.0)
    u = np.array([1.0, -2.0])
    assert form.norm_p(u, 1) == pytest.approx(2.0 + 6.0)
    assert form.norm_p(u, 2) == pytest.approx(math.sqrt(2.0 + 12.0))


def test_distances_require_coordinates():
    form = FiniteDirichletForm(m=[1.0, 1.0], c=[[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(FormError):
        form.distances()


# -- energy and carre du champ --------------------------------------------------

def test_energy_of_alternating_function_on_four_cycle():
    u = np.array([0.0, 1.0, 0.0, 1.0])
    assert energy(cycle(4), u, u) == pytest.approx(4.0, rel=1e-14)


def test_energy_includes_killing_term():
    form = path(3, killed=True)   # unit kill at both ends
    u = np.array([2.0, 0.0, 0.0])
    # single live edge contributes 4, the killed end contributes 4
    assert energy(form, u, u) == pytest.approx(8.0, rel=1e-14)


def test_energy_vanishes_on_constants_without_killing():
    form = cycle(7)
    ones = np.ones(7)
    assert abs(energy(form, ones, ones)) < 1e-14


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=2, max_value=9), st.integers(min_value=0, max_value=2 ** 31))
def test_carre_du_champ_reproduces_energy_pairing(n, seed):
    rng = np.random.default_rng(seed)
    form = random_form(rng, n, killed=bool(seed % 2))
    u = rng.normal(size=n)
    v = rng.normal(size=n)
    dens = carre_du_champ(form, u)
    lhs = float(np.sum(v * dens * form.m))
    rhs = energy(form, u, u * v) - 0.5 * energy(form, u * u, v)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_carre_du_champ_total_is_energy():
    # with killing the total picks up kill at half weight instead
    rng = np.random.default_rng(3)
    form = cycle(6)
    u = rng.normal(size=6)
    assert float(np.sum(carre_du_champ(form, u) * form.m)) == pytest.approx(
        energy(form, u, u), rel=1e-12)


def test_carre_du_champ_total_with_killing():
    rng = np.random.default_rng(4)
    form = path(6, killed=True)
    u = rng.normal(size=6)
    want = energy(form, u, u) - 0.5 * float(np.sum(u * u * form.kill))
    assert float(np.sum(carre_du_champ(form, u) * form.m)) == pytest.approx(
        want, rel=1e-12)


# -- tilting size ---------------------------------------------------------------

def test_lambda_sq_two_state_step():
    # psi = (0, 1) on a unit edge with unit masses: the tilt density at the
    # bottom state is (e - 1)^2 / 2, larger than the reversed tilt (1 - 1/e)^2 / 2
    got = lambda_sq(two_state(), np.array([0.0, 1.0]))
    assert got == pytest.approx(0.5 * (math.e - 1.0) ** 2, rel=1e-12)


def test_lambda_sq_is_even_in_psi():
    rng = np.random.default_rng(5)
    form = random_form(rng, 6)
    psi = rng.normal(size=6)
    assert lambda_sq(form, psi) == pytest.approx(lambda_sq(form, -psi), rel=1e-12)


def test_lambda_sq_scaling_is_superlinear_below_one():
    # (e^{a} - 1)^2 is convex in a, so halving psi more than halves Lambda^2
    form = two_state()
    psi = np.array([0.0, 2.0])
    full = lambda_sq(form, psi)
    half = lambda_sq(form, 0.5 * psi)
    assert 4.0 * half < full


def test_lambda_sq_survives_large_tilts():
    # Delta psi = 350 overflows exp(2 psi) naively; the clamped path keeps it finite
    form = two_state()
    big = lambda_sq(form, np.array([0.0, 350.0]))
    assert math.isfinite(big) and big > 1e300


def test_lambda_sq_zero_perturbation():
    assert lambda_sq(two_state(), np.zeros(2)) == 0.0


def test_perturbation_wrapper_accepted_everywhere():
    psi = Perturbation(np.array([0.0, 1.0]), name="step")
    assert lambda_sq(two_state(), psi) == pytest.approx(
        lambda_sq(two_state(), psi.psi), rel=1e-15)


# -- admissibility margin ---------------------------------------------------------

def test_admissibility_margin_constant_function_closed_form():
    # p = 1 and constant f: the energy terms collapse to the single edge and
    # the margin is f^2 (2 - 2 cosh a + (e^a - 1)^2) with ||f||_2^2 = 2 f^2
    a, f0 = 0.7, 1.3
    got = admissibility_margin(two_state(), Perturbation(np.array([0.0, a])),
                               np.array([f0, f0]), 1.0, 0.5)
    want = f0 * f0 * (2.0 - 2.0 * math.cosh(a) + (math.exp(a) - 1.0) ** 2)
    assert got == pytest.approx(want, rel=1e-12)


def test_admissibility_margin_rejects_bad_parameters():
    f = np.array([1.0, 1.0])
    psi = np.array([0.0, 1.0])
    with pytest.raises(FormError):
        admissibility_margin(two_state(), psi, f, 0.5, 0.5)      # p < 1
    with pytest.raises(FormError):
        admissibility_margin(two_state(), psi, f, 2.0, 1.0)      # s not in (0,1)
    with pytest.raises(FormError):
        admissibility_margin(two_state(), psi, np.array([1.0, -1.0]), 2.0, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31),
       st.floats(min_value=1.0, max_value=8.0),
       st.sampled_from([0.25, 0.5, 0.75]))
def test_admissibility_margin_nonnegative(seed, p, s):
    rng = np.random.default_rng(seed)
    form = random_form(rng, int(rng.integers(2, 10)), killed=bool(seed % 3 == 0))
    psi = rng.normal(0.0, 1.2, form.n)
    f = rng.uniform(0.0, 2.0, form.n) ** 2
    if not f.any():
        f[0] = 1.0
    marg = admissibility_margin(form, Perturbation(psi), f, p, s)
    scale = 1.0 + lambda_sq(form, psi) * float(np.sum(f ** (2 * p) * form.m))
    assert marg >= -1e-9 * scale


# -- restriction ------------------------------------------------------------------

def test_part_form_interior_segment_eigenvalue():
    # middle three states of a five-path: smallest absorbed eigenvalue 2 - sqrt(2)
    from heatbound.semigroup import SpectralKernel
    sub = part_form(path(5), [1, 2, 3])
    assert sub.n == 3
    assert SpectralKernel(sub).mu[0] == pytest.approx(2.0 - math.sqrt(2.0), rel=1e-12)


def test_part_form_boundary_conductance_becomes_killing():
    sub = part_form(path(5), [1, 2, 3])
    assert sub.has_killing
    np.testing.assert_allclose(sub.kill, [1.0, 0.0, 1.0])
    assert sub.total_mass() == pytest.approx(3.0)


def test_part_form_whole_space_is_identity():
    form = cycle(5)
    sub = part_form(form, list(range(5)))
    np.testing.assert_allclose(sub.c, form.c)
    assert not sub.has_killing


def test_part_form_rejects_empty_and_duplicate_domains():
    with pytest.raises(FormError):
        part_form(cycle(5), [])
    with pytest.raises(FormError):
        part_form(cycle(5), [1, 1, 2])


def test_part_form_energy_matches_zero_extension():
    form = cycle(6)
    sub = part_form(form, [0, 1, 2])
    u_sub = np.array([0.3, -1.1, 0.7])
    u_full = np.zeros(6)
    u_full[[0, 1, 2]] = u_sub
    assert energy(sub, u_sub, u_sub) == pytest.approx(
        energy(form, u_full, u_full), rel=1e-12)


# -- truncation and local tilting --------------------------------------------------

def test_truncate_keeps_short_edges():
    tf, tail = truncate(cycle(8), 1.01)
    assert tail == 0.0
    assert int((tf.c > 0).sum()) == 16     # all 8 unit edges survive


def test_truncate_drops_all_edges_below_unit_range():
    tf, tail = truncate(cycle(8), 0.5)
    assert not tf.c.any()
    # removed conductance bound: 2 sup_x sum_{|x-y| > rho} c/m = 2 * 2
    assert tail == pytest.approx(4.0)


def test_truncate_requires_coordinates():
    with pytest.raises(FormError):
        truncate(FiniteDirichletForm(m=[1.0, 1.0], c=[[0.0, 1.0], [1.0, 0.0]]), 1.0)


def test_gamma_rho_at_full_range_recovers_lambda_sq():
    psi = Perturbation(np.array([0.0, 1.0]))
    per_site = gamma_rho(two_state(), psi, 2.0)
    assert float(np.max(per_site)) == pytest.approx(
        lambda_sq(two_state(), psi), rel=1e-12)


def test_gamma_rho_ignores_long_edges():
    per_site = gamma_rho(cycle(8), Perturbation(np.linspace(0.0, 1.0, 8)), 0.5)
    np.testing.assert_allclose(per_site, 0.0)
