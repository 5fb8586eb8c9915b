"""Spectral kernels: closed forms, semigroup laws, perturbed norms, restrictions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heatbound.forms import FiniteDirichletForm, Perturbation
from heatbound.models import cycle, path, two_state
from heatbound.semigroup import (
    SpectralError, SpectralKernel, dirichlet_kernel_and_spectrum, heat_kernel,
    onediag_norm, perturbed_norm,
)


def random_form(rng, n, killed=False):
    c = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.7), 1)
    c = c + c.T
    if not c.any():
        c[0, 1] = c[1, 0] = 1.0
    kill = rng.uniform(0.0, 2.0, n) * (rng.random(n) < 0.5) if killed else None
    return FiniteDirichletForm(m=rng.uniform(0.2, 3.0, n), c=c, kill=kill)


# -- closed forms --------------------------------------------------------------

def test_two_state_kernel_closed_form():
    # unit edge, unit masses: eigenvalues 0 and 2, so
    # p(t) = [[1 + e^{-2t}, 1 - e^{-2t}], [., .]] / 2
    sk = SpectralKernel(two_state())
    for t in (0.1, 0.5, 2.0):
        e = math.exp(-2.0 * t)
        want = 0.5 * np.array([[1.0 + e, 1.0 - e], [1.0 - e, 1.0 + e]])
        np.testing.assert_allclose(sk.kernel(t), want, rtol=0, atol=1e-12)


def test_two_state_diagonal_norm_value():
    assert onediag_norm(two_state(), 0.5) == pytest.approx(
        0.5 * (1.0 + math.exp(-1.0)), rel=1e-12)


def test_cycle_spectrum_closed_form():
    mu = SpectralKernel(cycle(8)).spectrum()
    assert mu[0] == pytest.approx(0.0, abs=1e-12)
    assert mu[1] == pytest.approx(2.0 - math.sqrt(2.0), rel=1e-12)
    assert mu[2] == pytest.approx(2.0 - math.sqrt(2.0), rel=1e-12)
    assert mu[-1] == pytest.approx(4.0, rel=1e-12)


def test_kernel_at_time_zero_is_inverse_mass_diagonal():
    rng = np.random.default_rng(1)
    form = random_form(rng, 6)
    np.testing.assert_allclose(SpectralKernel(form).kernel(0.0),
                               np.diag(1.0 / form.m), atol=1e-10)


def test_perturbed_norm_two_state_value():
    # sup e^{psi(x)} p(t,x,y) e^{-psi(y)} lands on the tilted off-diagonal entry
    got = perturbed_norm(two_state(), 0.5, Perturbation(np.array([0.0, 1.0])))
    assert got == pytest.approx(math.e * 0.5 * (1.0 - math.exp(-1.0)), rel=1e-12)


# -- semigroup laws --------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31),
       st.floats(min_value=0.05, max_value=3.0),
       st.floats(min_value=0.05, max_value=3.0))
def test_chapman_kolmogorov(seed, s, t):
    rng = np.random.default_rng(seed)
    form = random_form(rng, int(rng.integers(2, 9)), killed=bool(seed % 2))
    sk = SpectralKernel(form)
    lhs = sk.kernel(s + t)
    rhs = sk.kernel(s) @ np.diag(form.m) @ sk.kernel(t)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_mass_conservation_without_killing():
    sk = SpectralKernel(cycle(9))
    row_mass = sk.kernel(1.3) @ sk.form.m
    np.testing.assert_allclose(row_mass, 1.0, atol=1e-12)


def test_killing_loses_mass():
    sk = SpectralKernel(path(5, killed=True))
    row_mass = sk.kernel(1.3) @ sk.form.m
    assert np.all(row_mass < 1.0)


def test_kernel_symmetry_and_positivity():
    rng = np.random.default_rng(8)
    form = random_form(rng, 7, killed=True)
    sk = SpectralKernel(form)
    P = sk.kernel(0.7)
    np.testing.assert_allclose(P, P.T, atol=1e-13)
    assert np.min(P) > -64 * sk.resolution


def test_apply_preserves_constants():
    sk = SpectralKernel(cycle(6))
    np.testing.assert_allclose(sk.apply(2.0, np.ones(6)), 1.0, atol=1e-12)


def test_diagonal_norm_decreases_in_time():
    sk = SpectralKernel(cycle(12))
    vals = [onediag_norm(sk, t) for t in np.geomspace(0.01, 50.0, 25)]
    assert all(a >= b - 1e-13 for a, b in zip(vals, vals[1:]))


def test_diagonal_norm_is_maximal_entry():
    sk = SpectralKernel(cycle(12))
    P = sk.kernel(0.9)
    assert onediag_norm(sk, 0.9) == pytest.approx(float(np.max(P)), rel=1e-12)


def test_perturbed_norm_at_zero_tilt_is_diagonal_norm():
    rng = np.random.default_rng(2)
    form = random_form(rng, 6)
    t = 0.8
    assert perturbed_norm(form, t, np.zeros(6)) == pytest.approx(
        onediag_norm(form, t), rel=1e-12)


# -- time validation --------------------------------------------------------------

def test_kernel_rejects_negative_time():
    with pytest.raises(SpectralError):
        SpectralKernel(two_state()).kernel(-0.1)


def test_operations_reject_nonpositive_time():
    form = two_state()
    for t in (0.0, -1.0):
        with pytest.raises(SpectralError):
            heat_kernel(form, t)
        with pytest.raises(SpectralError):
            onediag_norm(form, t)
        with pytest.raises(SpectralError):
            perturbed_norm(form, t, np.zeros(2))


def test_operations_accept_prebuilt_kernel():
    form = cycle(5)
    sk = SpectralKernel(form)
    np.testing.assert_allclose(heat_kernel(sk, 0.4), heat_kernel(form, 0.4))


# -- absorbed restrictions ----------------------------------------------------------

def test_restricted_spectrum_interior_segment():
    _, lam = dirichlet_kernel_and_spectrum(path(5), [1, 2, 3], t=1.0, k=1)
    assert lam[0] == pytest.approx(2.0 - math.sqrt(2.0), rel=1e-12)


def test_restriction_never_exceeds_full_kernel():
    form = cycle(10)
    domain = [2, 3, 4, 5]
    for t in (0.2, 1.0, 4.0):
        Pd, _ = dirichlet_kernel_and_spectrum(form, domain, t)
        P = heat_kernel(form, t)[np.ix_(domain, domain)]
        assert np.max(Pd - P) < 1e-12


def test_restricted_spectrum_positive():
    _, lam = dirichlet_kernel_and_spectrum(cycle(10), [0, 1, 2], t=0.5, k=3)
    assert np.all(lam > 0)
