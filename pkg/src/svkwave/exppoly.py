"""Exact algebra for exponential polynomials sum_j p_j(Y) exp(lambda_j Y).

This is the closed function class of every profile's dependence on the fast
normal variable Y on the half-line Y >= 0: products, Y-derivatives, tail
integrals to infinity and Duhamel integrals all stay inside the class, so
profile construction never discretizes Y.  Exponents must satisfy
Re lambda <= 0; lambda = 0 is reserved for constant (mean) content.

Polynomial coefficients may be complex scalars or numpy arrays over a slow
grid; all operations broadcast, which is how one symbolic Y-structure is
shared by a whole (t, x) plane of coefficients.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DegreeOverflowError",
    "DivergenceError",
    "ExpPoly",
    "DEGREE_CAP",
    "EXP_TOL",
]

DEGREE_CAP = 16
EXP_TOL = 1e-12


class DegreeOverflowError(RuntimeError):
    """Polynomial degree exceeded the configured cap."""


class DivergenceError(RuntimeError):
    """An integral to Y = infinity does not converge."""


def _is_zero_coef(c) -> bool:
    if isinstance(c, np.ndarray):
        return not np.any(c)
    return c == 0


def _trim(coeffs: list) -> list:
    while coeffs and _is_zero_coef(coeffs[-1]):
        coeffs.pop()
    return coeffs


class ExpPoly:
    """Finite sum of terms poly(Y) * exp(lambda * Y), immutable by convention.

    terms: list of (lambda, [c0, c1, ...]) with cj the coefficient of Y^j.
    Exponents are deduplicated within EXP_TOL (collisions are exact in
    practice because every exponent is an integer combination of the two
    decay rates).
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None, _normalized=False):
        if terms is None:
            terms = []
        if not _normalized:
            terms = self._normalize(terms)
        self.terms = terms

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls) -> "ExpPoly":
        return cls([], _normalized=True)

    @classmethod
    def const(cls, c) -> "ExpPoly":
        return cls([(0.0 + 0.0j, [c])])

    @classmethod
    def expterm(cls, lam, coeffs) -> "ExpPoly":
        """Single term poly(Y) exp(lam Y); coeffs = [c0, c1, ...]."""
        return cls([(complex(lam), list(coeffs))])

    # -- normalization ------------------------------------------------------

    @staticmethod
    def _normalize(raw):
        cleaned = []
        for lam, coeffs in raw:
            lam = complex(lam)
            coeffs = _trim(list(coeffs))
            if not coeffs:
                continue
            if abs(lam) <= EXP_TOL:
                lam = 0.0 + 0.0j
            if lam.real > 1e-10:
                raise ValueError(f"growing exponent Re lambda = {lam.real} > 0")
            if lam == 0 and len(coeffs) > 1:
                raise ValueError("non-constant polynomial at lambda = 0")
            if len(coeffs) - 1 > DEGREE_CAP:
                raise DegreeOverflowError(
                    f"degree {len(coeffs) - 1} exceeds cap {DEGREE_CAP}"
                )
            cleaned.append((lam, coeffs))
        cleaned.sort(key=lambda t: (t[0].real, t[0].imag))
        merged = []
        for lam, coeffs in cleaned:
            if merged and abs(lam - merged[-1][0]) <= EXP_TOL * max(1.0, abs(lam)):
                prev_lam, prev = merged[-1]
                n = max(len(prev), len(coeffs))
                out = [0.0] * n
                for j in range(n):
                    a = prev[j] if j < len(prev) else 0.0
                    b = coeffs[j] if j < len(coeffs) else 0.0
                    out[j] = a + b
                out = _trim(out)
                if out:
                    merged[-1] = (prev_lam, out)
                else:
                    merged.pop()
            else:
                merged.append((lam, coeffs))
        return merged

    # -- ring operations ----------------------------------------------------

    def __add__(self, other: "ExpPoly") -> "ExpPoly":
        if not isinstance(other, ExpPoly):
            return NotImplemented
        return ExpPoly(self.terms + other.terms)

    def __sub__(self, other: "ExpPoly") -> "ExpPoly":
        return self + other.scale(-1.0)

    def __neg__(self) -> "ExpPoly":
        return self.scale(-1.0)

    def scale(self, a) -> "ExpPoly":
        """Multiply by a Y-independent scalar or slow-grid array."""
        if _is_zero_coef(a) and not isinstance(a, np.ndarray):
            return ExpPoly.zero()
        return ExpPoly([(lam, [c * a for c in coeffs]) for lam, coeffs in self.terms])

    def __mul__(self, other):
        if isinstance(other, ExpPoly):
            out = []
            for la, ca in self.terms:
                for lb, cb in other.terms:
                    deg = len(ca) + len(cb) - 2
                    if deg > DEGREE_CAP:
                        raise DegreeOverflowError(
                            f"product degree {deg} exceeds cap {DEGREE_CAP}"
                        )
                    conv = [0.0] * (deg + 1)
                    for i, a in enumerate(ca):
                        if _is_zero_coef(a):
                            continue
                        for j, b in enumerate(cb):
                            conv[i + j] = conv[i + j] + a * b
                    out.append((la + lb, conv))
            return ExpPoly(out)
        return self.scale(other)

    __rmul__ = __mul__

    def diff(self) -> "ExpPoly":
        """d/dY, exact."""
        out = []
        for lam, coeffs in self.terms:
            d = [0.0] * len(coeffs)
            for j, c in enumerate(coeffs):
                d[j] = d[j] + lam * c
                if j > 0:
                    d[j - 1] = d[j - 1] + j * c
            out.append((lam, d))
        return ExpPoly(out)

    def conj(self) -> "ExpPoly":
        return ExpPoly(
            [(np.conj(lam), [np.conj(c) for c in coeffs]) for lam, coeffs in self.terms],
        )

    # -- integrals ----------------------------------------------------------

    def _require_decay(self, what: str):
        for lam, _ in self.terms:
            if lam.real >= -EXP_TOL:
                raise DivergenceError(f"{what} diverges: term with lambda = {lam}")

    @staticmethod
    def _tail_polys(lam: complex, degree: int):
        # P_j with int_Y^inf s^j e^{lam s} ds = e^{lam Y} P_j(Y)
        polys = [[-1.0 / lam]]
        for j in range(1, degree + 1):
            p = [-c * (j / lam) for c in polys[j - 1]]
            while len(p) < j + 1:
                p.append(0.0)
            p[j] += -1.0 / lam
            polys.append(p)
        return polys

    def tail(self) -> "ExpPoly":
        """Single tail integral int_Y^infinity f(s) ds."""
        self._require_decay("tail integral")
        out = []
        for lam, coeffs in self.terms:
            polys = self._tail_polys(lam, len(coeffs) - 1)
            res = [0.0] * len(coeffs)
            for j, c in enumerate(coeffs):
                if _is_zero_coef(c):
                    continue
                for i, p in enumerate(polys[j]):
                    res[i] = res[i] + c * p
            out.append((lam, res))
        return ExpPoly(out)

    def double_tail(self) -> "ExpPoly":
        """-int_Y^inf int_s^inf f(z) dz ds; second derivative gives -f."""
        return self.tail().tail().scale(-1.0)

    def duhamel(self, mu, from_zero: bool = True) -> "ExpPoly":
        """int_0^Y e^{mu (Y-s)} f(s) ds, or int_inf^Y when from_zero is False.

        Satisfies (d/dY - mu) result = f; resonant terms (lambda == mu) grow
        one polynomial degree, handled exactly.  The infinity-anchored form
        requires Re(lambda - mu) < 0 on every term.
        """
        mu = complex(mu)
        out = []
        for lam, coeffs in self.terms:
            gam = lam - mu
            resonant = abs(gam) <= EXP_TOL * max(1.0, abs(lam), abs(mu))
            if from_zero:
                if resonant:
                    res = [0.0] * (len(coeffs) + 1)
                    for j, c in enumerate(coeffs):
                        res[j + 1] = c / (j + 1)
                    if len(res) - 1 > DEGREE_CAP:
                        raise DegreeOverflowError("resonant degree exceeds cap")
                    out.append((mu, res))
                else:
                    # q_j(s) = s^j/gam - (j/gam) q_{j-1}; antiderivative of s^j e^{gam s}
                    qpolys = [[1.0 / gam]]
                    for j in range(1, len(coeffs)):
                        p = [-c * (j / gam) for c in qpolys[j - 1]]
                        while len(p) < j + 1:
                            p.append(0.0)
                        p[j] += 1.0 / gam
                        qpolys.append(p)
                    qf = [0.0] * len(coeffs)
                    q0 = 0.0
                    for j, c in enumerate(coeffs):
                        if _is_zero_coef(c):
                            continue
                        for i, p in enumerate(qpolys[j]):
                            qf[i] = qf[i] + c * p
                        q0 = q0 + c * qpolys[j][0]
                    out.append((lam, qf))
                    out.append((mu, [-q0]))
            else:
                if gam.real >= -EXP_TOL:
                    raise DivergenceError(
                        f"infinity-anchored Duhamel diverges: Re(lambda - mu) = {gam.real}"
                    )
                polys = self._tail_polys(gam, len(coeffs) - 1)
                res = [0.0] * len(coeffs)
                for j, c in enumerate(coeffs):
                    if _is_zero_coef(c):
                        continue
                    for i, p in enumerate(polys[j]):
                        res[i] = res[i] - c * p
                out.append((lam, res))
        return ExpPoly(out)

    def value_at_zero(self):
        """f(0); scalar or slow-grid array."""
        tot = 0.0
        for _, coeffs in self.terms:
            tot = tot + coeffs[0]
        return tot

    def integral_zero_inf(self):
        """int_0^infinity f(Y) dY, exact."""
        self._require_decay("integral over (0, inf)")
        tot = 0.0
        for lam, coeffs in self.terms:
            for j, c in enumerate(coeffs):
                if _is_zero_coef(c):
                    continue
                tot = tot + c * math.factorial(j) / (-lam) ** (j + 1)
        return tot

    # -- evaluation and inspection -----------------------------------------

    def __call__(self, Y):
        """Evaluate at Y (scalar or array); broadcasts against coefficients."""
        Y = np.asarray(Y)
        tot = None
        for lam, coeffs in self.terms:
            p = 0.0
            for c in reversed(coeffs):
                p = p * Y + c
            term = p * np.exp(lam * Y)
            tot = term if tot is None else tot + term
        if tot is None:
            return np.zeros(Y.shape, dtype=complex) if Y.shape else 0.0 + 0.0j
        return tot

    def is_zero(self) -> bool:
        return not self.terms

    def max_abs(self) -> float:
        """Coefficient magnitude bound; a cheap field-scale proxy."""
        m = 0.0
        for _, coeffs in self.terms:
            for c in coeffs:
                m = max(m, float(np.max(np.abs(c))) if isinstance(c, np.ndarray) else abs(c))
        return m

    def prune(self, tol: float) -> "ExpPoly":
        """Drop terms whose every coefficient is below tol in magnitude."""
        out = []
        for lam, coeffs in self.terms:
            keep = []
            for c in coeffs:
                mag = float(np.max(np.abs(c))) if isinstance(c, np.ndarray) else abs(c)
                keep.append(c if mag > tol else 0.0)
            if any(not _is_zero_coef(c) for c in keep):
                out.append((lam, keep))
        return ExpPoly(out)

    def map_coeffs(self, fn) -> "ExpPoly":
        """Apply fn to every polynomial coefficient (e.g. a slow derivative)."""
        return ExpPoly(
            [(lam, [fn(c) for c in coeffs]) for lam, coeffs in self.terms]
        )

    def degree(self) -> int:
        return max((len(c) - 1 for _, c in self.terms), default=-1)

    def __repr__(self):
        if not self.terms:
            return "ExpPoly(0)"
        bits = []
        for lam, coeffs in self.terms:
            bits.append(f"deg{len(coeffs) - 1}*exp({lam:.4g}Y)")
        return "ExpPoly(" + " + ".join(bits) + ")"
