# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled stencil kernels; arithmetic mirrors svkwave._stencils_np exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef inline void _flux(double ux, double uy, double vx, double vy,
                       double lam, bint linear, double* T) noexcept nogil:
    cdef double ex, ey, exy2, tr, s00, s11, s01
    if linear:
        tr = ux + vy
        T[0] = lam * tr + 2.0 * ux      # T00
        T[1] = uy + vx                  # T01
        T[2] = uy + vx                  # T10
        T[3] = lam * tr + 2.0 * vy      # T11
        return
    ex = ux + 0.5 * (ux * ux + vx * vx)
    ey = vy + 0.5 * (uy * uy + vy * vy)
    exy2 = uy + vx + ux * uy + vx * vy
    tr = ex + ey
    s00 = lam * tr + 2.0 * ex
    s11 = lam * tr + 2.0 * ey
    s01 = exy2
    T[0] = (1.0 + ux) * s00 + uy * s01
    T[1] = (1.0 + ux) * s01 + uy * s11
    T[2] = vx * s00 + (1.0 + vy) * s01
    T[3] = vx * s01 + (1.0 + vy) * s11


def flux_T(ux, uy, vx, vy, double lam, bint linear):
    """Array-capable wrapper used only by tests; delegates to the fallback."""
    from . import _stencils_np
    return _stencils_np.flux_T(ux, uy, vx, vy, lam, linear)


def divergence(double[:, :, ::1] P, double hx, double hy, double lam,
               bint linear, out=None):
    cdef Py_ssize_t Nx = P.shape[1]
    cdef Py_ssize_t Npad = P.shape[2]
    cdef Py_ssize_t Ny1 = Npad - 2
    if out is None:
        out = np.empty((2, Nx, Ny1))
    cdef double[:, :, ::1] o = out
    fx_arr = np.empty((2, Nx, Ny1))
    cdef double[:, :, ::1] fx = fx_arr

    cdef Py_ssize_t i, ip1, im1, jj, f
    cdef double ux, uy, vx, vy
    cdef double T[4]
    cdef double fyu_prev, fyv_prev, fyu, fyv
    cdef double inv_hx = 1.0 / hx
    cdef double inv_hy = 1.0 / hy
    cdef double inv_4hy = 1.0 / (4.0 * hy)
    cdef double inv_4hx = 1.0 / (4.0 * hx)

    with nogil:
        # x faces (i+1/2, jj), physical jj = 1 .. Npad-2
        for i in range(Nx):
            ip1 = i + 1 if i + 1 < Nx else 0
            for jj in range(1, Npad - 1):
                ux = (P[0, ip1, jj] - P[0, i, jj]) * inv_hx
                vx = (P[1, ip1, jj] - P[1, i, jj]) * inv_hx
                uy = (P[0, i, jj + 1] + P[0, ip1, jj + 1]
                      - P[0, i, jj - 1] - P[0, ip1, jj - 1]) * inv_4hy
                vy = (P[1, i, jj + 1] + P[1, ip1, jj + 1]
                      - P[1, i, jj - 1] - P[1, ip1, jj - 1]) * inv_4hy
                _flux(ux, uy, vx, vy, lam, linear, T)
                fx[0, i, jj - 1] = T[0]
                fx[1, i, jj - 1] = T[2]

        # y faces and assembly
        for i in range(Nx):
            ip1 = i + 1 if i + 1 < Nx else 0
            im1 = i - 1 if i > 0 else Nx - 1
            # face below the first physical row (between jj = 0 and 1)
            uy = (P[0, i, 1] - P[0, i, 0]) * inv_hy
            vy = (P[1, i, 1] - P[1, i, 0]) * inv_hy
            ux = (P[0, ip1, 0] + P[0, ip1, 1] - P[0, im1, 0] - P[0, im1, 1]) * inv_4hx
            vx = (P[1, ip1, 0] + P[1, ip1, 1] - P[1, im1, 0] - P[1, im1, 1]) * inv_4hx
            _flux(ux, uy, vx, vy, lam, linear, T)
            fyu_prev = T[1]
            fyv_prev = T[3]
            for f in range(1, Npad - 1):
                uy = (P[0, i, f + 1] - P[0, i, f]) * inv_hy
                vy = (P[1, i, f + 1] - P[1, i, f]) * inv_hy
                ux = (P[0, ip1, f] + P[0, ip1, f + 1]
                      - P[0, im1, f] - P[0, im1, f + 1]) * inv_4hx
                vx = (P[1, ip1, f] + P[1, ip1, f + 1]
                      - P[1, im1, f] - P[1, im1, f + 1]) * inv_4hx
                _flux(ux, uy, vx, vy, lam, linear, T)
                fyu = T[1]
                fyv = T[3]
                o[0, i, f - 1] = (fx[0, i, f - 1] - fx[0, im1, f - 1]) * inv_hx \
                    + (fyu - fyu_prev) * inv_hy
                o[1, i, f - 1] = (fx[1, i, f - 1] - fx[1, im1, f - 1]) * inv_hx \
                    + (fyv - fyv_prev) * inv_hy
                fyu_prev = fyu
                fyv_prev = fyv
    return out
