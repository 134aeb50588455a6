"""Slow-variable discretization shared by the profile construction.

Profiles carry their slow (t, x) dependence as arrays over a periodic
spectral x-box (the same box the amplitude solver marches on) sampled at
uniform time levels.  x-derivatives are spectral with the 2/3 mask, time
derivatives are 4th-order central stencils with one-sided closures at the
window ends; both are exact on the polynomial probes used for operator
extraction.  The fast normal variable never appears here: it stays inside
ExpPoly coefficients, which broadcast over these (t, x) arrays.
"""

from __future__ import annotations

import math

import numpy as np

from .amplitude import SpectralGrid
from .exppoly import ExpPoly

__all__ = [
    "fd_weights",
    "stencil_matrix",
    "SlowGrid",
    "ep_sum",
    "lagrange_rows",
]


def fd_weights(offsets, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative on unit-spaced nodes.

    Solves the Vandermonde moment system, so the rule is exact on
    polynomials of degree < len(offsets).  Offsets are relative node
    positions; divide the result by h**m for spacing h.
    """
    offsets = np.asarray(offsets, dtype=float)
    p = len(offsets)
    if m >= p:
        raise ValueError(f"need more than {m} nodes for derivative order {m}")
    V = np.vander(offsets, p, increasing=True).T
    rhs = np.zeros(p)
    rhs[m] = math.factorial(m)
    return np.linalg.solve(V, rhs)


def stencil_matrix(npts: int, h: float, m: int, width: int = 5) -> np.ndarray:
    """Dense derivative matrix: central interior rows, one-sided at the ends.

    width-point rules give order width - m; width = 5 yields 4th order for
    the first and 3rd for the second derivative at the edges, which the
    causally flat window ends never see at full size.
    """
    if npts < width:
        raise ValueError(f"need at least {width} levels, got {npts}")
    D = np.zeros((npts, npts))
    half = (width - 1) // 2
    for i in range(npts):
        j0 = min(max(i - half, 0), npts - width)
        D[i, j0 : j0 + width] = fd_weights(np.arange(width) - (i - j0), m) / h**m
    return D


class SlowGrid:
    """Periodic x-box with uniform time levels t_i = i * T / N_t.

    Wraps the amplitude module's SpectralGrid for the x axis and theta-mode
    bookkeeping; adds the time window and the slow derivative operators.
    Treated as immutable after construction.
    """

    def __init__(self, sgrid: SpectralGrid, T: float, N_t: int):
        if T <= 0 or N_t < 4:
            raise ValueError("need T > 0 and at least 4 time steps")
        self.sgrid = sgrid
        self.T = float(T)
        self.N_t = int(N_t)
        self.dt = self.T / self.N_t
        self.tvals = np.arange(self.N_t + 1) * self.dt
        self._d1 = stencil_matrix(self.N_t + 1, self.dt, 1)
        self._d2 = stencil_matrix(self.N_t + 1, self.dt, 2, width=6)
        self._ikx = 1j * sgrid.xi * sgrid.mask_x

    @property
    def x(self) -> np.ndarray:
        return self.sgrid.x

    @property
    def n_max(self) -> int:
        return self.sgrid.n_max

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N_t + 1, self.sgrid.N_x)

    # -- slow derivatives; scalars are slow-constants with derivative 0 ------

    def dx(self, c, order: int = 1):
        if not isinstance(c, np.ndarray):
            return 0.0
        return np.fft.ifft(np.fft.fft(c, axis=-1) * self._ikx**order, axis=-1)

    def remask(self, c):
        """Project onto the 2/3-dealiased x band."""
        if not isinstance(c, np.ndarray):
            return c
        return np.fft.ifft(np.fft.fft(c, axis=-1) * self.sgrid.mask_x, axis=-1)

    def dt1(self, c):
        if not isinstance(c, np.ndarray):
            return 0.0
        return np.einsum("ij,j...->i...", self._d1, c)

    def dt2(self, c):
        if not isinstance(c, np.ndarray):
            return 0.0
        return np.einsum("ij,j...->i...", self._d2, c)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=complex)


def ep_sum(polys) -> ExpPoly:
    """Sum many ExpPolys with a single normalization pass."""
    terms = []
    for p in polys:
        terms.extend(p.terms)
    return ExpPoly(terms)


def lagrange_rows(tvals: np.ndarray, t: float) -> tuple[int, np.ndarray]:
    """4-point Lagrange interpolation stencil on uniform tvals at time t.

    Returns (first row index, 4 weights); t is clamped to the window.
    """
    dt = tvals[1] - tvals[0]
    j = int(np.clip((t - tvals[0]) / dt, 0, len(tvals) - 1 - 1e-12))
    j0 = min(max(j - 1, 0), len(tvals) - 4)
    w = np.ones(4)
    for a in range(4):
        for b in range(4):
            if a != b:
                w[a] *= (t - tvals[j0 + b]) / (tvals[j0 + a] - tvals[j0 + b])
    return j0, w
