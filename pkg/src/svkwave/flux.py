"""Saint Venant-Kirchhoff stress flux, expanded by polynomial order.

With displacement gradient G = grad U the strain is E = (G + G^T + G^T G)/2,
the second Piola stress is S = (r - 2) tr(E) I + 2 E (shear modulus 1,
Lame lambda = r - 2), and the flux entering both the interior divergence
and the traction is the first Piola stress T = (I + G) S.  T is exactly
cubic in G; the three multilinear parts are coded in closed form over a
generic ring, so the same formulas serve numpy arrays and exponential
polynomials.

Slot convention for gradients: a 2x2 nested sequence G[i][j] = d_j U_i.
The quadratic and cubic forms are symmetric in their arguments.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = [
    "piola_linear",
    "piola_quadratic",
    "piola_cubic",
    "piola_full",
    "lame_tensors",
    "stored_energy",
]


def _mat(a00, a01, a10, a11):
    return ((a00, a01), (a10, a11))


def _matmul(A, B):
    return _mat(
        A[0][0] * B[0][0] + A[0][1] * B[1][0],
        A[0][0] * B[0][1] + A[0][1] * B[1][1],
        A[1][0] * B[0][0] + A[1][1] * B[1][0],
        A[1][0] * B[0][1] + A[1][1] * B[1][1],
    )


def _add(A, B):
    return _mat(
        A[0][0] + B[0][0], A[0][1] + B[0][1], A[1][0] + B[1][0], A[1][1] + B[1][1]
    )


def _smul(s, A):
    return _mat(s * A[0][0], s * A[0][1], s * A[1][0], s * A[1][1])


def piola_linear(G, r: float):
    """(r - 2) tr(G) I + G + G^T; the classical elastic flux."""
    lam = r - 2.0
    t = G[0][0] + G[1][1]
    return _mat(
        lam * t + 2.0 * G[0][0],
        G[0][1] + G[1][0],
        G[1][0] + G[0][1],
        lam * t + 2.0 * G[1][1],
    )


def _strain_quad(A, B):
    # symmetric bilinear part of the strain: (A^T B + B^T A) / 4
    return _mat(
        0.5 * (A[0][0] * B[0][0] + A[1][0] * B[1][0]),
        0.25 * (A[0][0] * B[0][1] + A[1][0] * B[1][1] + B[0][0] * A[0][1] + B[1][0] * A[1][1]),
        0.25 * (A[0][1] * B[0][0] + A[1][1] * B[1][0] + B[0][1] * A[0][0] + B[1][1] * A[1][0]),
        0.5 * (A[0][1] * B[0][1] + A[1][1] * B[1][1]),
    )


def _hooke(E, r: float):
    lam = r - 2.0
    t = E[0][0] + E[1][1]
    return _mat(lam * t + 2.0 * E[0][0], 2.0 * E[0][1], 2.0 * E[1][0], lam * t + 2.0 * E[1][1])


def piola_quadratic(A, B, r: float):
    """Symmetric bilinear flux: T2(G, G) is the quadratic part of T(G)."""
    geom = _smul(
        0.5, _add(_matmul(A, piola_linear(B, r)), _matmul(B, piola_linear(A, r)))
    )
    return _add(geom, _hooke(_strain_quad(A, B), r))


def piola_cubic(A, B, C, r: float):
    """Symmetric trilinear flux: T3(G, G, G) is the cubic part of T(G)."""
    term = _add(
        _matmul(A, _hooke(_strain_quad(B, C), r)),
        _add(
            _matmul(B, _hooke(_strain_quad(A, C), r)),
            _matmul(C, _hooke(_strain_quad(A, B), r)),
        ),
    )
    return _smul(1.0 / 3.0, term)


def piola_full(G, r: float):
    """T(G) = T1 + T2 + T3 exactly."""
    return _add(
        piola_linear(G, r), _add(piola_quadratic(G, G, r), piola_cubic(G, G, G, r))
    )


@lru_cache(maxsize=8)
def lame_tensors(r: float):
    """Dense coefficient tensors (L, Q, C) of the flux expansion.

    Gradient components are flattened as a = 2*i + j for G[i][j], so
    T_ij = L[i,j,a] g_a + Q[i,j,a,b] g_a g_b + C[i,j,a,b,c] g_a g_b g_c
    with Q, C symmetric in their lower indices.
    """
    basis = []
    for i in range(2):
        for j in range(2):
            e = np.zeros((2, 2))
            e[i, j] = 1.0
            basis.append(tuple(map(tuple, e)))
    L = np.zeros((2, 2, 4))
    Q = np.zeros((2, 2, 4, 4))
    C = np.zeros((2, 2, 4, 4, 4))
    for a in range(4):
        La = piola_linear(basis[a], r)
        for i in range(2):
            for j in range(2):
                L[i, j, a] = La[i][j]
        for b in range(4):
            Qab = piola_quadratic(basis[a], basis[b], r)
            for i in range(2):
                for j in range(2):
                    Q[i, j, a, b] = Qab[i][j]
            for c3 in range(4):
                Cabc = piola_cubic(basis[a], basis[b], basis[c3], r)
                for i in range(2):
                    for j in range(2):
                        C[i, j, a, b, c3] = Cabc[i][j]
    L.setflags(write=False)
    Q.setflags(write=False)
    C.setflags(write=False)
    return L, Q, C


def stored_energy(G, r: float):
    """SVK energy density W = (r-2)/2 tr(E)^2 + tr(E^2), numpy arrays only.

    G has shape (2, 2, ...) with leading gradient indices.
    """
    G = np.asarray(G)
    E = 0.5 * (G + np.swapaxes(G, 0, 1) + np.einsum("ki...,kj...->ij...", G, G))
    trE = E[0, 0] + E[1, 1]
    trE2 = np.einsum("ij...,ji...->...", E, E)
    return 0.5 * (r - 2.0) * trE**2 + trE2
