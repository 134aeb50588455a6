"""Pure-numpy stencil kernels; reference implementation of the hot loops.

The compiled extension (svkwave._stencils) implements the same arithmetic
expression for expression; this module is the always-available fallback and
the correctness baseline the extension is tested against.

Padded layout: P[c, i, jj] with c in (u, v), i periodic in x, jj = 0 the
ghost row below the boundary, jj = 1 .. Ny+1 the physical rows y_j = (jj-1)*hy,
jj = Ny+2 the ghost row above the top.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def flux_T(ux, uy, vx, vy, lam, linear):
    """First Piola stress columns of the SVK flux at given gradients.

    Returns (T00, T01, T10, T11); T_i0 is the x-flux and T_i1 the y-flux of
    component i.  linear=True evaluates only the first-order part.
    """
    if linear:
        tr = ux + vy
        T00 = lam * tr + 2.0 * ux
        T11 = lam * tr + 2.0 * vy
        T01 = uy + vx
        T10 = uy + vx
        return T00, T01, T10, T11
    ex = ux + 0.5 * (ux * ux + vx * vx)
    ey = vy + 0.5 * (uy * uy + vy * vy)
    exy2 = uy + vx + ux * uy + vx * vy  # twice the shear strain
    tr = ex + ey
    s00 = lam * tr + 2.0 * ex
    s11 = lam * tr + 2.0 * ey
    s01 = exy2
    T00 = (1.0 + ux) * s00 + uy * s01
    T01 = (1.0 + ux) * s01 + uy * s11
    T10 = vx * s00 + (1.0 + vy) * s01
    T11 = vx * s01 + (1.0 + vy) * s11
    return T00, T01, T10, T11


def divergence(P, hx, hy, lam, linear, out=None):
    """Div T(grad U) on the physical rows from the padded field P.

    Staggered-face evaluation: fluxes live on cell faces with the face-normal
    derivative exact to the face and the transverse derivative averaged from
    neighboring centered differences; the divergence is the conservative face
    difference.  Second order on smooth fields.
    """
    _, Nx, Npad = P.shape
    Ny1 = Npad - 2  # number of physical rows
    if out is None:
        out = np.empty((2, Nx, Ny1))

    u, v = P[0], P[1]
    up1, vp1 = np.roll(u, -1, axis=0), np.roll(v, -1, axis=0)

    # x faces (i+1/2, jj) for physical jj = 1 .. Ny1
    c = slice(1, Npad - 1)
    a, b = slice(2, Npad), slice(0, Npad - 2)
    ux = (up1[:, c] - u[:, c]) / hx
    vx = (vp1[:, c] - v[:, c]) / hx
    uy = (u[:, a] + up1[:, a] - u[:, b] - up1[:, b]) / (4.0 * hy)
    vy = (v[:, a] + vp1[:, a] - v[:, b] - vp1[:, b]) / (4.0 * hy)
    T00, _, T10, _ = flux_T(ux, uy, vx, vy, lam, linear)
    out[0] = (T00 - np.roll(T00, 1, axis=0)) / hx
    out[1] = (T10 - np.roll(T10, 1, axis=0)) / hx

    # y faces (i, jj+1/2) between padded rows jj and jj+1, jj = 0 .. Npad-2
    lo, hi = slice(0, Npad - 1), slice(1, Npad)
    uy = (u[:, hi] - u[:, lo]) / hy
    vy = (v[:, hi] - v[:, lo]) / hy
    um1, vm1 = np.roll(u, 1, axis=0), np.roll(v, 1, axis=0)
    ux = (up1[:, lo] + up1[:, hi] - um1[:, lo] - um1[:, hi]) / (4.0 * hx)
    vx = (vp1[:, lo] + vp1[:, hi] - vm1[:, lo] - vm1[:, hi]) / (4.0 * hx)
    _, T01, _, T11 = flux_T(ux, uy, vx, vy, lam, linear)
    out[0] += (T01[:, 1:] - T01[:, :-1]) / hy
    out[1] += (T11[:, 1:] - T11[:, :-1]) / hy
    return out
