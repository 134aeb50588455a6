"""Finite-difference solver for the nonlinear SVK half-plane with traction data.

Explicit leapfrog on displacements U(t, x, y), x periodic, y in [0, y_max]
with the physical traction boundary at y = 0 and a cosine sponge under a
clamped top.  The interior divergence comes from conservative staggered-face
fluxes (see _stencils_np); the boundary is closed by a ghost row solving the
discrete traction condition with a vectorized 2x2 Newton iteration.

The hot kernel is the compiled extension svkwave._stencils when available;
set SVKWAVE_FORCE_NUMPY=1 to force the pure-numpy fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _stencils_np

if os.environ.get("SVKWAVE_FORCE_NUMPY"):
    _kern = _stencils_np
else:
    try:
        from . import _stencils as _kern
    except ImportError:
        _kern = _stencils_np


def backend_name() -> str:
    return _kern.BACKEND


class InstabilityError(RuntimeError):
    """NaN or runaway growth detected; reduce dt or data amplitude."""


class NewtonError(RuntimeError):
    """Traction ghost solve failed to converge."""


@dataclass
class SolverConfig:
    r: float = 3.0
    mode: str = "nonlinear"  # or "linearized"
    L_x: float = 12.0
    N_x: int = 256
    y_max: float = 6.0
    N_y: int = 128  # rows j = 0 .. N_y
    cfl: float = 0.45
    dt: float | None = None
    bc: str = "traction"  # or "periodic" (fully periodic, no boundary)
    sponge_width: float = 1.5
    sponge_strength: float = 30.0
    newton_tol: float = 1e-12
    newton_max: int = 8
    guard_ceiling: float = 1e6
    guard_every: int = 25

    def __post_init__(self):
        if self.mode not in ("nonlinear", "linearized"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.bc not in ("traction", "periodic"):
            raise ValueError(f"unknown bc {self.bc!r}")
        if self.r <= 1.0:
            raise ValueError("r must exceed 1")

    @property
    def hx(self) -> float:
        return self.L_x / self.N_x

    @property
    def hy(self) -> float:
        return self.y_max / self.N_y

    @property
    def lam(self) -> float:
        return self.r - 2.0

    def timestep(self) -> float:
        limit = self.cfl * min(self.hx, self.hy) / math.sqrt(self.r)
        if self.dt is None:
            return limit
        if self.dt > limit * (1.0 + 1e-12):
            raise ValueError(f"dt = {self.dt} violates the CFL limit {limit:.3e}")
        return self.dt

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N_x) * self.hx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.N_y + 1) * self.hy


class FDSeries:
    """Run output: sparse snapshots plus per-step scalar series."""

    def __init__(self):
        self.times: list[float] = []
        self.snaps: list[np.ndarray] = []
        self.energy_t: list[float] = []
        self.energy: list[float] = []
        self.boundary_t: list[float] = []
        self.boundary: list[np.ndarray] = []

    def add_snap(self, t, U):
        self.times.append(t)
        self.snaps.append(U.copy())

    def final(self) -> np.ndarray:
        return self.snaps[-1]


class FDSolver:
    """Marches one configuration; owns its arrays.

    traction: callable(t, x) -> (2, N_x), the prescribed flux column at y=0.
    source:   callable(t, x, y) -> (2, N_x, N_y+1), interior forcing added to
              the acceleration (for manufactured solutions).
    """

    def __init__(self, config: SolverConfig, traction=None, source=None):
        self.cfg = config
        self.traction = traction
        self.source = source
        c = config
        self.t = 0.0
        shape = (2, c.N_x, c.N_y + 1)
        self.U = np.zeros(shape)
        self.U_prev = np.zeros(shape)
        self._P = np.zeros((2, c.N_x, c.N_y + 3))
        self._div = np.empty(shape)
        self._ghost = np.zeros((2, c.N_x))
        self.dt = c.timestep()
        self._sponge = self._make_sponge()
        self._steps = 0

    def _make_sponge(self) -> np.ndarray:
        c = self.cfg
        if c.bc == "periodic" or c.sponge_width <= 0.0:
            return np.zeros(c.N_y + 1)
        y = c.y
        y0 = c.y_max - c.sponge_width
        s = np.zeros_like(y)
        ramp = y > y0
        s[ramp] = 0.5 * (1.0 - np.cos(np.pi * (y[ramp] - y0) / c.sponge_width))
        return c.sponge_strength * s

    # -- boundary closure ---------------------------------------------------

    def _traction_target(self, t) -> np.ndarray:
        if self.traction is None:
            return np.zeros((2, self.cfg.N_x))
        g = np.asarray(self.traction(t, self.cfg.x), dtype=float)
        if g.shape != (2, self.cfg.N_x):
            raise ValueError("traction callable must return shape (2, N_x)")
        return g

    def _solve_ghost(self, U, t) -> np.ndarray:
        """Ghost row below y=0 making the discrete traction exact at row 0."""
        c = self.cfg
        lam = c.lam
        linear = c.mode == "linearized"
        g = self._traction_target(t)
        u0, v0 = U[0, :, 0], U[1, :, 0]
        u1, v1 = U[0, :, 1], U[1, :, 1]
        ux = (np.roll(u0, -1) - np.roll(u0, 1)) / (2.0 * c.hx)
        vx = (np.roll(v0, -1) - np.roll(v0, 1)) / (2.0 * c.hx)
        if linear:
            # T01 = uy + vx = g0, T11 = lam(ux + vy) + 2 vy = g1, explicitly
            uy = g[0] - vx
            vy = (g[1] - lam * ux) / (lam + 2.0)
            return np.stack([u1 - 2.0 * c.hy * uy, v1 - 2.0 * c.hy * vy])
        gu, gv = self._ghost  # warm start from the previous step
        scale = max(1.0, float(np.max(np.abs(g))), float(np.max(np.abs(U[:, :, :2]))))
        for _ in range(c.newton_max):
            uy = (u1 - gu) / (2.0 * c.hy)
            vy = (v1 - gv) / (2.0 * c.hy)
            _, T01, _, T11 = _stencils_np.flux_T(ux, uy, vx, vy, lam, False)
            r0 = T01 - g[0]
            r1 = T11 - g[1]
            res = max(np.max(np.abs(r0)), np.max(np.abs(r1)))
            if res < c.newton_tol * scale:
                break
            ey = vy + 0.5 * (uy * uy + vy * vy)
            ex = ux + 0.5 * (ux * ux + vx * vx)
            s11 = lam * (ex + ey) + 2.0 * ey
            # d(T01,T11)/d(uy,vy), then chain rule d(uy)/d(gu) = -1/(2 hy)
            a = (1.0 + ux) ** 2 + s11 + (lam + 2.0) * uy * uy
            b = (1.0 + ux) * vx + (lam + 2.0) * uy * (1.0 + vy)
            d = vx * (1.0 + ux) + (lam + 2.0) * (1.0 + vy) * uy
            e = vx * vx + s11 + (lam + 2.0) * (1.0 + vy) ** 2
            fac = -1.0 / (2.0 * c.hy)
            det = (a * e - b * d) * fac * fac
            dgu = (e * r0 - b * r1) * fac / det
            dgv = (-d * r0 + a * r1) * fac / det
            gu = gu - dgu
            gv = gv - dgv
        else:
            raise NewtonError(f"traction Newton stalled at t={t:.6g}, residual {res:.3e}")
        self._ghost = np.stack([gu, gv])
        return self._ghost

    def boundary_residual(self, U=None, t=None) -> float:
        """Max traction defect at the converged ghost row (diagnostic)."""
        c = self.cfg
        U = self.U if U is None else U
        t = self.t if t is None else t
        ghost = self._solve_ghost(U, t)
        g = self._traction_target(t)
        ux = (np.roll(U[0, :, 0], -1) - np.roll(U[0, :, 0], 1)) / (2.0 * c.hx)
        vx = (np.roll(U[1, :, 0], -1) - np.roll(U[1, :, 0], 1)) / (2.0 * c.hx)
        uy = (U[0, :, 1] - ghost[0]) / (2.0 * c.hy)
        vy = (U[1, :, 1] - ghost[1]) / (2.0 * c.hy)
        _, T01, _, T11 = _stencils_np.flux_T(
            ux, uy, vx, vy, c.lam, c.mode == "linearized"
        )
        return float(max(np.max(np.abs(T01 - g[0])), np.max(np.abs(T11 - g[1]))))

    def _fill_padded(self, U, t) -> np.ndarray:
        c = self.cfg
        P = self._P
        P[:, :, 1:-1] = U
        if c.bc == "periodic":
            P[:, :, 0] = U[:, :, -1]
            P[:, :, -1] = U[:, :, 0]
        else:
            P[:, :, 0] = self._solve_ghost(U, t)
            P[:, :, -1] = 0.0
        return P

    # -- time marching ------------------------------------------------------

    def accel(self, U=None, t=None) -> np.ndarray:
        """Div T(grad U) + source; the acceleration field."""
        c = self.cfg
        U = self.U if U is None else U
        t = self.t if t is None else t
        P = self._fill_padded(U, t)
        _kern.divergence(P, c.hx, c.hy, c.lam, c.mode == "linearized", self._div)
        if self.source is not None:
            self._div += self.source(t, c.x, c.y)
        return self._div

    def step(self) -> None:
        c = self.cfg
        dt = self.dt
        acc = self.accel(self.U, self.t)
        damp = self._sponge[None, None, :] * dt
        U_new = (
            2.0 * self.U
            - self.U_prev
            + dt * dt * acc
            - damp * (self.U - self.U_prev)
        )
        if c.bc == "traction":
            U_new[:, :, -1] = 0.0
        self.U_prev, self.U = self.U, U_new
        self.t += dt
        self._steps += 1
        if self._steps % c.guard_every == 0:
            m = float(np.max(np.abs(self.U)))
            if not np.isfinite(m) or m > c.guard_ceiling:
                raise InstabilityError(f"field magnitude {m} at t = {self.t:.6g}")

    def velocity(self) -> np.ndarray:
        """Backward-difference velocity at the current time."""
        return (self.U - self.U_prev) / self.dt

    def energy(self) -> float:
        """Kinetic + stored energy over the strip (trapezoid in y)."""
        from .flux import stored_energy

        c = self.cfg
        v = self.velocity()
        P = self._fill_padded(self.U, self.t)
        G = np.empty((2, 2, c.N_x, c.N_y + 1))
        for comp in range(2):
            f = P[comp]
            G[comp, 0] = (np.roll(f[:, 1:-1], -1, 0) - np.roll(f[:, 1:-1], 1, 0)) / (
                2.0 * c.hx
            )
            G[comp, 1] = (f[:, 2:] - f[:, :-2]) / (2.0 * c.hy)
        if self.cfg.mode == "linearized":
            E = 0.5 * (G + np.swapaxes(G, 0, 1))
            trE = E[0, 0] + E[1, 1]
            W = 0.5 * c.lam * trE**2 + np.einsum("ij...,ij...->...", E, E)
        else:
            W = stored_energy(G, c.r)
        dens = 0.5 * np.sum(v * v, axis=0) + W
        wy = np.ones(c.N_y + 1)
        wy[0] = wy[-1] = 0.5
        return float(np.sum(dens * wy) * c.hx * c.hy)

    def run(
        self,
        T: float,
        snap_times=(),
        observer=None,
        observe_every: int = 1,
        track_energy: bool = False,
        track_boundary: bool = False,
    ) -> FDSeries:
        """March to time T, recording snapshots nearest to snap_times."""
        series = FDSeries()
        want = sorted(snap_times)
        nsteps = int(round(T / self.dt))
        for k in range(nsteps):
            self.step()
            while want and self.t >= want[0] - 0.5 * self.dt:
                series.add_snap(self.t, self.U)
                want.pop(0)
            if observer is not None and (k + 1) % observe_every == 0:
                observer(self)
            if track_energy:
                series.energy_t.append(self.t)
                series.energy.append(self.energy())
            if track_boundary:
                series.boundary_t.append(self.t)
                series.boundary.append(self.U[:, :, 0].copy())
        if not series.snaps:
            series.add_snap(self.t, self.U)
        return series
