"""Dispersion algebra tests.

Frozen wavespeeds below were produced by an independent 50-digit root solve
(mpmath.findroot on the surface-wave determinant) and are checked here to
1e-12 against the production bisection + Newton path.
"""

import numpy as np
import pytest

from svkwave.dispersion import (
    DomainError,
    ElasticMedium,
    SolvabilityError,
    boundary_trace_matrix,
    first_order_matrix,
    lopatinski_matrix,
    lopatinski_restricted_inverse,
    mode_basis,
    rayleigh_data,
    rayleigh_function,
    rayleigh_speed,
    slowness_roots,
)

# r -> wavespeed, 50-digit oracle, truncated
SPEEDS = {
    1.5: 0.77423922544015418307,
    2.0: 0.87403204889764214160,
    3.0: 0.91940168676196612196,
    5.0: 0.93865670616083187267,
    10.0: 0.94822860249975895439,
}

RS = sorted(SPEEDS)


def test_slowness_roots_examples():
    w1, w2 = slowness_roots(0.0, 3.0)
    assert w1 == 1j and w2 == 1j
    w1, w2 = slowness_roots(0.5, 4.0)
    assert abs(w1 - 1j * np.sqrt(0.75)) < 1e-15
    assert abs(w2 - 1j * np.sqrt(1 - 0.25 / 4)) < 1e-15


def test_slowness_roots_domain():
    with pytest.raises(DomainError):
        slowness_roots(1.0, 3.0)
    with pytest.raises(DomainError):
        slowness_roots(-0.1, 3.0)
    with pytest.raises(DomainError):
        slowness_roots(0.5, 1.0)


def test_medium_validation():
    m = ElasticMedium.from_ratio(3.0)
    assert m.lame_mu == 1.0 and m.lame_lambda == 1.0 and m.r == 3.0
    with pytest.raises(ValueError):
        ElasticMedium(lame_lambda=-5.0, lame_mu=1.0)
    with pytest.raises(ValueError):
        ElasticMedium.from_ratio(0.9)


@pytest.mark.parametrize("r", RS)
def test_rayleigh_speed_against_oracle(r):
    c = rayleigh_speed(r)
    assert abs(c - SPEEDS[r]) < 1e-12


@pytest.mark.parametrize("r", RS)
def test_rayleigh_identities(r):
    d = rayleigh_data(r)
    assert 0 < d.c < 1
    # subsonic decay rates are real and positive
    assert d.omega1.real == 0 and d.omega1.imag > 0
    assert d.omega2.real == 0 and d.omega2.imag > 0
    assert abs(d.q - np.sqrt(d.omega1.imag * d.omega2.imag)) < 1e-14
    # surface-wave condition, two equivalent forms
    assert abs(2 - d.c**2 - 2 * d.q) < 1e-12
    assert abs(np.linalg.det(d.B_lop)) < 1e-10
    assert abs(rayleigh_function(d.c, r)) < 1e-10


@pytest.mark.parametrize("r", RS)
def test_kernel_and_cokernel(r):
    d = rayleigh_data(r)
    assert np.linalg.norm(d.B_lop @ d.ker_vec) < 1e-12
    assert np.linalg.norm(d.coker_vec @ d.B_lop) < 1e-12
    # stated closed forms
    assert abs(d.ker_vec[0] - d.omega2) < 1e-14
    assert abs(d.ker_vec[1] + d.q) < 1e-14
    assert abs(d.coker_vec[0] - d.q) < 1e-14
    assert abs(d.coker_vec[1] - d.omega2) < 1e-14


@pytest.mark.parametrize("n", [1, -1, 5, -5])
@pytest.mark.parametrize("r", [2.0, 3.0, 10.0])
def test_mode_basis_eigenvectors(r, n):
    d = rayleigh_data(r)
    G = first_order_matrix(n, d.c, r)
    mb = d.modes(n)
    for w, R in zip(mb.omega, mb.R):
        res = G @ np.asarray(R) - 1j * n * w * np.asarray(R)
        assert np.linalg.norm(res) < 1e-12
    # decaying pair has negative real exponent i n omega
    for w in mb.omega[:2]:
        assert (1j * n * w).real < 0
    for w in mb.omega[2:]:
        assert (1j * n * w).real > 0


@pytest.mark.parametrize("n", [1, -1, 3])
@pytest.mark.parametrize("r", [1.5, 3.0, 5.0])
def test_mode_basis_biorthogonal(r, n):
    d = rayleigh_data(r)
    mb = d.modes(n)
    P = np.array([[np.dot(L, R) for R in mb.R] for L in mb.L])
    assert np.linalg.norm(P - np.eye(4)) < 1e-12


@pytest.mark.parametrize("r", [3.0, 5.0])
def test_mode_basis_conjugation(r):
    d = rayleigh_data(r)
    for n in (1, 2):
        mp_, mm = d.modes(n), d.modes(-n)
        for j in range(4):
            assert np.array_equal(np.conj(mp_.R[j]), mm.R[j])
            assert np.array_equal(np.conj(mp_.L[j]), mm.L[j])
            assert np.conj(mp_.omega[j]) == mm.omega[j]


@pytest.mark.parametrize("r", [2.0, 3.0])
def test_trace_matrix_maps_modes_to_lopatinski(r):
    # C(beta, n) R_{1,2} reproduces the columns of the boundary determinant
    # matrix scaled by i n, which is what makes the surface wave possible.
    d = rayleigh_data(r)
    for n in (1, -1, 4):
        C = boundary_trace_matrix(n, r)
        mb = d.modes(n)
        col1 = C @ np.asarray(mb.R[0])
        col2 = C @ np.asarray(mb.R[1])
        B = lopatinski_matrix(d.c, r)
        if n < 0:
            B = np.conj(B)
        assert np.allclose(col1, 1j * n * B[:, 0], atol=1e-12)
        assert np.allclose(col2, 1j * n * B[:, 1], atol=1e-12)
        assert np.allclose(boundary_trace_matrix(-n, r), np.conj(C), atol=1e-15)
    with pytest.raises(DomainError):
        boundary_trace_matrix(0, r)


def test_restricted_inverse_solves_in_range():
    d = rayleigh_data(3.0)
    rng = np.random.default_rng(7)
    for _ in range(5):
        w = rng.normal(size=2) + 1j * rng.normal(size=2)
        rhs = d.B_lop @ w
        sigma = d.restricted_inverse(rhs)
        assert np.linalg.norm(d.B_lop @ sigma - rhs) < 1e-12
        assert abs(np.vdot(d.ker_vec, sigma)) < 1e-12


def test_restricted_inverse_zero_and_incompatible():
    d = rayleigh_data(3.0)
    assert np.linalg.norm(d.restricted_inverse(np.zeros(2))) == 0
    # the cokernel direction itself is maximally incompatible
    with pytest.raises(SolvabilityError):
        lopatinski_restricted_inverse(
            d.B_lop, np.conj(d.coker_vec), d.ker_vec, d.coker_vec
        )


def test_speed_monotone_in_r():
    cs = [rayleigh_speed(r) for r in RS]
    assert all(a < b for a, b in zip(cs, cs[1:]))
