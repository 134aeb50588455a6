"""Exponential-polynomial algebra tests.

Integrals are checked against adaptive arbitrary-precision quadrature
(mpmath.quad); algebraic laws are property-tested by sampling on a Y grid.
"""

import cmath

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svkwave.exppoly import (
    DEGREE_CAP,
    DegreeOverflowError,
    DivergenceError,
    ExpPoly,
)

YGRID = np.linspace(0.0, 6.0, 13)

LAMBDAS = [-0.5, -1.0, -1.75, -0.5 - 1.0j, -2.0 + 0.5j]


def ref_eval(f: ExpPoly, y: float) -> complex:
    # independent of ExpPoly.__call__ internals
    tot = 0j
    for lam, coeffs in f.terms:
        p = sum(complex(c) * y**j for j, c in enumerate(coeffs))
        tot += p * cmath.exp(complex(lam) * y)
    return tot


def ref_eval_mp(f: ExpPoly, y):
    # mpmath arithmetic throughout, safe for quadrature nodes far out
    tot = mpmath.mpc(0)
    for lam, coeffs in f.terms:
        p = sum(mpmath.mpc(complex(c)) * y**j for j, c in enumerate(coeffs))
        tot += p * mpmath.exp(mpmath.mpc(complex(lam)) * y)
    return tot


def close(f: ExpPoly, g: ExpPoly, tol=1e-9):
    fa, ga = f(YGRID), g(YGRID)
    scale = max(1.0, np.max(np.abs(fa)), np.max(np.abs(ga)))
    return np.max(np.abs(fa - ga)) <= tol * scale


coef = st.floats(-3, 3, allow_nan=False).map(lambda x: round(x, 3))
poly = st.lists(coef, min_size=1, max_size=4)
term = st.tuples(st.sampled_from(LAMBDAS), poly)


@st.composite
def exppolys(draw, with_const=True):
    terms = draw(st.lists(term, min_size=0, max_size=3))
    if with_const and draw(st.booleans()):
        terms.append((0.0, [draw(coef)]))
    return ExpPoly(terms)


@given(exppolys(), exppolys(), exppolys())
@settings(max_examples=60, deadline=None)
def test_ring_axioms(f, g, h):
    assert close(f + g, g + f)
    assert close((f + g) + h, f + (g + h))
    assert close(f * g, g * f)
    assert close((f * g) * h, f * (g * h), tol=1e-8)
    assert close(f * (g + h), f * g + f * h, tol=1e-8)
    assert close(f + ExpPoly.zero(), f)
    assert close(f * ExpPoly.const(1.0), f)
    assert (f - f).prune(1e-12).is_zero()


@given(exppolys(), exppolys())
@settings(max_examples=60, deadline=None)
def test_leibniz_and_linearity(f, g):
    assert close((f * g).diff(), f.diff() * g + f * g.diff(), tol=1e-8)
    assert close((f + g).diff(), f.diff() + g.diff())


@given(exppolys(with_const=False))
@settings(max_examples=60, deadline=None)
def test_fundamental_theorem(f):
    # d/dY of the tail integral recovers -f; second derivative of the
    # double tail recovers -f as well.
    assert close(f.tail().diff(), f.scale(-1.0), tol=1e-8)
    assert close(f.double_tail().diff().diff(), f.scale(-1.0), tol=1e-7)


@given(exppolys())
@settings(max_examples=40, deadline=None)
def test_conjugation(f):
    g = f.conj()
    assert np.allclose(g(YGRID), np.conj(f(YGRID)), atol=1e-12)
    assert close((f * f).conj(), g * g, tol=1e-8)
    assert close(f.conj().conj(), f, tol=1e-12)


def test_eval_matches_reference():
    f = ExpPoly([(-1.0, [1.0, 2.0, 0.5]), (-0.5 - 1j, [0.0, 1j]), (0.0, [3.0])])
    for y in YGRID:
        assert abs(f(y) - ref_eval(f, y)) < 1e-12


def mp_quad_tail(f, y0):
    return complex(
        mpmath.quad(lambda s: mpmath.mpc(ref_eval(f, float(s))), [y0, mpmath.inf])
    )


def test_tail_against_quadrature():
    f = ExpPoly([(-0.7, [1.0, -2.0, 0.3]), (-1.3 + 0.4j, [2.0, 1.0])])
    t = f.tail()
    for y0 in (0.0, 0.8, 2.5):
        assert abs(t(y0) - mp_quad_tail(f, y0)) < 1e-11


def test_integral_zero_inf_against_quadrature():
    f = ExpPoly([(-0.9, [0.5, 1.0, 0.0, 2.0]), (-2.0 + 1j, [1.0, 1.0])])
    assert abs(f.integral_zero_inf() - mp_quad_tail(f, 0.0)) < 1e-11
    with pytest.raises(DivergenceError):
        ExpPoly.const(1.0).integral_zero_inf()
    with pytest.raises(DivergenceError):
        ExpPoly.const(1.0).tail()


@pytest.mark.parametrize("mu", [-0.4, -1.0, -0.9 + 0.3j])
def test_duhamel_from_zero(mu):
    f = ExpPoly([(-1.0, [1.0, 0.5]), (-0.4, [2.0])])  # -0.4 resonates with mu=-0.4
    g = f.duhamel(mu, from_zero=True)
    # solves (d/dY - mu) g = f with g(0) = 0
    assert close(g.diff() - g.scale(mu), f, tol=1e-9)
    assert abs(g.value_at_zero()) < 1e-12
    # quadrature check at one point
    y0 = 1.7
    val = complex(
        mpmath.quad(
            lambda s: mpmath.mpc(
                cmath.exp(complex(mu) * (y0 - float(s))) * ref_eval(f, float(s))
            ),
            [0.0, y0],
        )
    )
    assert abs(g(y0) - val) < 1e-11


def test_duhamel_from_infinity():
    f = ExpPoly([(-2.0, [1.0, 1.0]), (-1.5, [0.5])])
    mu = -1.0  # decays slower than every term of f
    g = f.duhamel(mu, from_zero=False)
    assert close(g.diff() - g.scale(mu), f, tol=1e-9)
    y0 = 0.6
    val = -complex(
        mpmath.quad(
            lambda s: mpmath.exp(mpmath.mpc(mu) * (y0 - s)) * ref_eval_mp(f, s),
            [y0, mpmath.inf],
        )
    )
    assert abs(g(y0) - val) < 1e-11
    with pytest.raises(DivergenceError):
        f.duhamel(-3.0, from_zero=False)


def test_degree_cap_and_lambda_zero_guard():
    f = ExpPoly([(-1.0, [0.0] * 9 + [1.0])])
    with pytest.raises(DegreeOverflowError):
        f * f
    with pytest.raises(ValueError):
        ExpPoly([(0.0, [1.0, 2.0])])
    with pytest.raises(ValueError):
        ExpPoly([(0.3, [1.0])])


def test_array_coefficients_broadcast():
    a = np.array([1.0, 2.0, 3.0])
    f = ExpPoly([(-1.0, [a, 2.0 * a])])
    g = f * f + f.scale(0.5)
    for i, ai in enumerate(a):
        fi = ExpPoly([(-1.0, [ai, 2.0 * ai])])
        gi = fi * fi + fi.scale(0.5)
        assert abs(g(1.3)[i] - gi(1.3)) < 1e-12
    assert np.allclose(f.tail().integral_zero_inf().imag, 0.0)
    assert f.max_abs() == 6.0


def test_dedup_merges_equal_exponents():
    f = ExpPoly([(-1.0, [1.0]), (-1.0, [2.0, 1.0])])
    assert len(f.terms) == 1
    assert f.terms[0][1][0] == 3.0


def test_map_coeffs():
    f = ExpPoly([(-1.0, [1.0, 2.0])])
    assert close(f.map_coeffs(lambda c: 2 * c), f.scale(2.0))
