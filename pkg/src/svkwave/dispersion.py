"""Rayleigh dispersion algebra for an isotropic elastic half-plane.

Units are scaled so the shear speed is 1 (mu = 1, density 1); the material
then enters only through r = (lambda + 2 mu) / mu = c_d^2 > 1.  Everything
here lives at the Rayleigh frequency beta = (-c, 1): subsonic surface-wave
decay rates, the Lopatinski matrix with its kernel/cokernel, the boundary
trace matrix, and the eigenmode bases of the first-order fast system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainError",
    "NoBracketError",
    "SolvabilityError",
    "ElasticMedium",
    "RayleighData",
    "ModeBasis",
    "slowness_roots",
    "rayleigh_function",
    "rayleigh_speed",
    "lopatinski_matrix",
    "lopatinski_restricted_inverse",
    "boundary_trace_matrix",
    "first_order_matrix",
    "mode_basis",
    "rayleigh_data",
]


class DomainError(ValueError):
    """Parameters outside the subsonic/elliptic regime."""


class NoBracketError(RuntimeError):
    """The Rayleigh function has no sign change on (0, 1)."""


class SolvabilityError(RuntimeError):
    """Right side fails the cokernel compatibility condition."""


@dataclass(frozen=True)
class ElasticMedium:
    """Isotropic elastic material, stored as Lame constants.

    All wave algebra uses the single ratio r = (lambda + 2 mu) / mu.
    """

    lame_lambda: float
    lame_mu: float

    def __post_init__(self):
        if self.lame_mu <= 0 or self.lame_lambda + self.lame_mu <= 0:
            raise DomainError("need mu > 0 and lambda + mu > 0")

    @property
    def r(self) -> float:
        return (self.lame_lambda + 2.0 * self.lame_mu) / self.lame_mu

    @classmethod
    def from_ratio(cls, r: float) -> "ElasticMedium":
        # mu = 1 in scaled units; lambda = r - 2
        if r <= 1.0:
            raise DomainError(f"need r > 1, got {r}")
        return cls(lame_lambda=r - 2.0, lame_mu=1.0)


def slowness_roots(c: float, r: float) -> tuple[complex, complex]:
    """Normal decay exponents omega_1, omega_2 in the elliptic region.

    omega_1^2 = c^2 - 1 and omega_2^2 = c^2/r - 1; for 0 < c < 1 < r both
    are purely imaginary and the branch with positive imaginary part is
    returned (the conjugates omega_3, omega_4 are never recomputed).
    """
    if not (0.0 <= c < 1.0) or r <= 1.0:
        raise DomainError(f"need 0 <= c < 1 < r, got c={c}, r={r}")
    omega1 = 1j * np.sqrt(1.0 - c * c)
    omega2 = 1j * np.sqrt(1.0 - c * c / r)
    return complex(omega1), complex(omega2)


def rayleigh_function(c, r: float):
    """f(c) = (2 - c^2)^2 - 4 sqrt(1 - c^2) sqrt(1 - c^2/r).

    Vanishes exactly at the Rayleigh speed (and trivially at c = 0).
    """
    c2 = np.asarray(c) ** 2
    return (2.0 - c2) ** 2 - 4.0 * np.sqrt(1.0 - c2) * np.sqrt(1.0 - c2 / r)


def rayleigh_speed(r: float, tol: float = 1e-12) -> float:
    """Rayleigh speed c in (0, 1), scaled by the shear speed.

    Bisection on a certified sign-change bracket of the Rayleigh function,
    then Newton polish.  f(c) < 0 just above c = 0 and f -> 1 as c -> 1,
    so the unique interior root is bracketed by a coarse scan.
    """
    if r <= 1.0:
        raise DomainError(f"need r > 1, got {r}")
    if tol <= 0.0:
        raise DomainError("tol must be positive")

    cs = np.linspace(1e-6, 1.0 - 1e-12, 2001)
    fs = rayleigh_function(cs, r)
    sign_change = np.nonzero(np.diff(np.sign(fs)) > 0)[0]
    if sign_change.size == 0:
        raise NoBracketError(f"no sign change of the Rayleigh function for r={r}")
    lo, hi = cs[sign_change[-1]], cs[sign_change[-1] + 1]

    flo = rayleigh_function(lo, r)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fmid = rayleigh_function(mid, r)
        if fmid == 0.0:
            lo = hi = mid
            break
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break

    c = 0.5 * (lo + hi)
    # Newton polish with analytic derivative
    for _ in range(50):
        f = rayleigh_function(c, r)
        s1 = np.sqrt(1.0 - c * c)
        s2 = np.sqrt(1.0 - c * c / r)
        df = -4.0 * c * (2.0 - c * c) + 4.0 * c * (s2 / s1 + s1 / (s2 * r))
        step = f / df
        c -= step
        if abs(step) < 0.25 * tol:
            break

    omega1, omega2 = slowness_roots(c, r)
    q = np.sqrt((-omega1 * omega2).real)
    if abs(2.0 - c * c - 2.0 * q) > max(tol, 1e-12):
        raise NoBracketError(f"Rayleigh refinement failed for r={r}")
    return float(c)


def lopatinski_matrix(c: float, r: float) -> np.ndarray:
    """B_Lop = [[2 - c^2, 2 omega_2], [2 omega_1, c^2 - 2]].

    Singular exactly at the Rayleigh speed; off-diagonal entries purely
    imaginary in the elliptic region.
    """
    omega1, omega2 = slowness_roots(c, r)
    return np.array(
        [[2.0 - c * c, 2.0 * omega2], [2.0 * omega1, c * c - 2.0]], dtype=complex
    )


def lopatinski_restricted_inverse(
    B: np.ndarray,
    rhs: np.ndarray,
    ker_vec: np.ndarray,
    coker_vec: np.ndarray,
    rtol: float = 1e-8,
) -> np.ndarray:
    """Solve B sigma = rhs with sigma Hermitian-orthogonal to ker(B).

    B has rank 1 at the Rayleigh speed; the solve is a bordered 3x3 system
    [[B, m], [ker^H, 0]] with m spanning the Hermitian complement of Im(B),
    so conditioning stays transparent.  Raises SolvabilityError when the
    cokernel pairing of rhs is outside rtol of its scale, signalling a
    violated boundary solvability condition upstream.
    """
    rhs = np.asarray(rhs, dtype=complex)
    scale = np.linalg.norm(rhs) + np.linalg.norm(B)
    pairing = coker_vec @ rhs
    if abs(pairing) > rtol * max(scale, 1.0):
        raise SolvabilityError(
            f"cokernel pairing {abs(pairing):.3e} exceeds {rtol:.1e} * scale {scale:.3e}"
        )
    m = np.conj(coker_vec).reshape(2, 1)
    M = np.zeros((3, 3), dtype=complex)
    M[:2, :2] = B
    M[:2, 2] = m[:, 0]
    M[2, :2] = np.conj(ker_vec)
    b = np.zeros(3, dtype=complex)
    b[:2] = rhs
    sol = np.linalg.solve(M, b)
    return sol[:2]


def boundary_trace_matrix(n: int, r: float) -> np.ndarray:
    """C(beta, n): traction trace acting on (u, v, u', v') at Y = 0.

    Rows give (in v + u', (r-2) in u + r v'), the per-mode form of the fast
    traction operator.
    """
    if n == 0:
        raise DomainError("boundary trace matrix is defined for n != 0")
    inn = 1j * n
    return np.array(
        [[0.0, inn, 1.0, 0.0], [(r - 2.0) * inn, 0.0, 0.0, r]], dtype=complex
    )


def first_order_matrix(n: int, c: float, r: float) -> np.ndarray:
    """G(beta, n) of the first-order fast system d/dY (U, U') = G (U, U')."""
    if n == 0:
        raise DomainError("first-order matrix is defined for n != 0")
    G = np.zeros((4, 4), dtype=complex)
    G[0, 2] = 1.0
    G[1, 3] = 1.0
    G[2, 0] = n * n * (r - c * c)
    G[3, 1] = n * n * (1.0 - c * c) / r
    G[2, 3] = 1j * n * (1.0 - r)
    G[3, 2] = 1j * n * (1.0 / r - 1.0)
    return G


@dataclass(frozen=True)
class ModeBasis:
    """Eigenvectors R_j and dual rows L_j of G(beta, n), j = 1..4.

    Sign-aware ordering: omega_{1,2} carry sgn(n), so modes 1, 2 decay as
    Y -> +infinity for either sign of n and modes 3, 4 grow.  This makes
    conj(R_j(n)) = R_j(-n) hold bit-exactly for every j, which is what the
    reality of physical fields needs.  L_i R_j = delta_ij.
    """

    n: int
    omega: tuple[complex, complex, complex, complex]
    R: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    L: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def _R12(n: int, omega1: complex, omega2: complex):
    inn = 1j * n
    R1 = np.array([-omega1, 1.0, -inn * omega1**2, inn * omega1], dtype=complex)
    R2 = np.array([1.0, omega2, inn * omega2, inn * omega2**2], dtype=complex)
    return R1, R2


def _L12(n: int, c: float, r: float, omega1: complex, omega2: complex):
    inn = 1j * n
    L1 = np.array(
        [-inn * (r - c * c), -inn * omega1, omega1, -r], dtype=complex
    ) / (-2.0 * inn * omega1 * c * c)
    L2 = np.array(
        [inn * omega2 * r, inn * (c * c - 1.0), 1.0, r * omega2], dtype=complex
    ) / (2.0 * inn * omega2 * c * c)
    return L1, L2


def mode_basis(n: int, c: float, r: float) -> ModeBasis:
    """Eigenmode basis of the first-order fast system at theta-mode n.

    The two eigenvector families (shear-like and pressure-like) are each
    instantiated at +/- the signed slowness root, giving the decaying pair
    first and the growing pair second for either sign of n.
    """
    if n == 0:
        raise DomainError("mode basis is defined for n != 0")
    w1, w2 = slowness_roots(c, r)
    if n < 0:
        w1, w2 = -w1, -w2
    R1, R2 = _R12(n, w1, w2)
    L1, L2 = _L12(n, c, r, w1, w2)
    R3, R4 = _R12(n, -w1, -w2)
    L3, L4 = _L12(n, c, r, -w1, -w2)
    return ModeBasis(
        n=n,
        omega=(w1, w2, -w1, -w2),
        R=(R1, R2, R3, R4),
        L=(L1, L2, L3, L4),
    )


@dataclass(frozen=True)
class RayleighData:
    """All Rayleigh-frequency constants for one material ratio r.

    Immutable; shared freely across threads.  ker_vec spans ker B_Lop,
    coker_vec (a row) annihilates B_Lop from the left; rhat_coef are the
    kernel-combination weights (omega2, -q) used by the surface-wave
    profile.
    """

    r: float
    c: float
    omega1: complex
    omega2: complex
    q: float
    r1: np.ndarray = field(repr=False)
    r2: np.ndarray = field(repr=False)
    B_lop: np.ndarray = field(repr=False)
    ker_vec: np.ndarray = field(repr=False)
    coker_vec: np.ndarray = field(repr=False)

    def modes(self, n: int) -> ModeBasis:
        return mode_basis(n, self.c, self.r)

    def trace_matrix(self, n: int) -> np.ndarray:
        return boundary_trace_matrix(n, self.r)

    def restricted_inverse(self, rhs: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
        return lopatinski_restricted_inverse(
            self.B_lop, rhs, self.ker_vec, self.coker_vec, rtol
        )


def rayleigh_data(r: float, tol: float = 1e-12) -> RayleighData:
    """Solve the dispersion problem for ratio r and freeze all derived algebra."""
    c = rayleigh_speed(r, tol)
    omega1, omega2 = slowness_roots(c, r)
    q = float(np.sqrt((-omega1 * omega2).real))
    r1 = np.array([-omega1, 1.0], dtype=complex)
    r2 = np.array([1.0, omega2], dtype=complex)
    B = lopatinski_matrix(c, r)
    ker_vec = np.array([omega2, -q], dtype=complex)
    coker_vec = np.array([q, omega2], dtype=complex)
    data = RayleighData(
        r=r,
        c=c,
        omega1=omega1,
        omega2=omega2,
        q=q,
        r1=r1,
        r2=r2,
        B_lop=B,
        ker_vec=ker_vec,
        coker_vec=coker_vec,
    )
    # construction-time sanity: the frozen algebra must close
    assert abs(B @ ker_vec).max() < 1e-11
    assert abs(coker_vec @ B).max() < 1e-11
    return data
