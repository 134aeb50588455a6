"""Epsilon-weighted norms, the error energy, residual scans, slope fits.

The norms measure two-scale families uniformly in the wavelength: each
derivative costs one power of eps, so a wavetrain of amplitude eps^2 and
wavelength eps keeps all its weighted derivatives comparable.  The same
weighting builds the three-term energy used in the error analysis.  The
residual scan plugs a sampled displacement field into the actual interior
and traction operators with high-order stencils, which is how the cascade
output's order claims are checked against the full nonlinear system; the
slope fit turns families of such scans into convergence verdicts.

All fields live on uniform space-time sample grids (FieldSeries).  Spatial
derivatives use 4th-order stencils (periodic wrap in x when declared,
one-sided near window edges otherwise), so measured residual floors sit at
the stencil truncation level of the sampled field, not of these tools.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .flux import piola_full
from .slowgrid import fd_weights, stencil_matrix

__all__ = [
    "FieldSeries",
    "NormSpec",
    "ResidualScan",
    "eps_norm",
    "energy",
    "residual_scan",
    "slope_fit",
    "write_norm_csv",
    "write_verdict_json",
]


@dataclass
class FieldSeries:
    """Uniformly sampled space-time field on a rectangular window.

    data is (N_t, n_comp, n_x, n_y) on times tvals; scalar input
    (N_t, n_x, n_y) is promoted to one component.  dx, dy are the grid
    spacings, x0/y0 the window origin.  x_periodic declares that the x
    rows wrap (full period sampled without the right endpoint), which
    switches both the x-derivatives and the x-quadrature to periodic
    form.
    """

    tvals: np.ndarray
    data: np.ndarray
    dx: float
    dy: float
    x0: float = 0.0
    y0: float = 0.0
    x_periodic: bool = False

    def __post_init__(self):
        self.tvals = np.asarray(self.tvals, dtype=float)
        self.data = np.asarray(self.data)
        if self.data.ndim == 3:
            self.data = self.data[:, None, :, :]
        if self.data.ndim != 4:
            raise ValueError("data must be (N_t, [n_comp,] n_x, n_y)")
        if self.data.shape[0] != self.tvals.size:
            raise ValueError("time axis does not match tvals")
        if self.tvals.size >= 2:
            steps = np.diff(self.tvals)
            if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
                raise ValueError("tvals must be uniformly spaced")
        if self.dx <= 0.0 or self.dy <= 0.0:
            raise ValueError("grid spacings must be positive")

    @property
    def dt(self) -> float:
        if self.tvals.size < 2:
            raise ValueError("series has no time step")
        return float(self.tvals[1] - self.tvals[0])

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.data.shape[2])

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.data.shape[3])

    def level(self, t: float) -> int:
        """Index of the sample time t; must land on a level."""
        j = int(round((t - self.tvals[0]) / self.dt)) if self.tvals.size > 1 else 0
        if not (0 <= j < self.tvals.size) or abs(t - self.tvals[j]) > 1e-9 * max(
            1.0, float(self.tvals[-1] - self.tvals[0])
        ):
            raise ValueError(f"t = {t} is not a sample level")
        return j

    @classmethod
    def from_callable(cls, f, tvals, xs, ys, **kw) -> "FieldSeries":
        """Sample f(t, X, Y) (meshgrid'ed, indexing='ij') on a grid."""
        tvals = np.asarray(tvals, dtype=float)
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        data = np.stack([np.asarray(f(t, X, Y)) for t in tvals])
        return cls(
            tvals,
            data,
            dx=float(xs[1] - xs[0]),
            dy=float(ys[1] - ys[0]),
            x0=float(xs[0]),
            y0=float(ys[0]),
            **kw,
        )


# stencil support needed for an m-th derivative at 4th order; above s = 4
# the window edges are dominated by stencil noise on realistic grids
_MAX_S = 4


@dataclass(frozen=True)
class NormSpec:
    """Orders of the weighted norm: s mixed derivatives, k extra spatial."""

    s: int
    k: int
    eps: float

    def __post_init__(self):
        if not (0 <= self.s <= _MAX_S):
            raise ValueError(f"s must lie in 0..{_MAX_S}")
        if not (0 <= self.k <= _MAX_S):
            raise ValueError(f"k must lie in 0..{_MAX_S}")
        if not (self.eps > 0.0):
            raise ValueError("eps must be positive")


def _width(m: int) -> int:
    # one extra point beyond formal 4th order, kept odd so interior rows center
    w = m + 4
    return w if w % 2 else w + 1


def _diff_axis(arr: np.ndarray, axis: int, m: int, h: float, periodic: bool):
    """m-th derivative along one axis, 4th-order accurate."""
    if m == 0:
        return arr
    n = arr.shape[axis]
    w = _width(m)
    if n < w:
        raise ValueError(
            f"axis of {n} samples cannot support an order-{m} derivative "
            f"at 4th order (needs {w})"
        )
    if periodic:
        offs = np.arange(w) - w // 2
        wgt = fd_weights(offs, m) / h**m
        out = np.zeros_like(arr, dtype=np.result_type(arr, float))
        for o, c in zip(offs, wgt):
            out += c * np.roll(arr, -int(o), axis=axis)
        return out
    D = stencil_matrix(n, h, m, width=w)
    moved = np.moveaxis(arr, axis, 0)
    return np.moveaxis(np.tensordot(D, moved, axes=(1, 0)), 0, axis)


def _time_deriv_at(series: FieldSeries, m: int, j: int) -> np.ndarray:
    """d_t^m of the series at level j (full-history stencil row)."""
    if m == 0:
        return series.data[j]
    n = series.tvals.size
    w = _width(m)
    if n < w:
        raise ValueError(
            f"series of {n} time levels cannot support d_t^{m} at 4th order"
        )
    D = stencil_matrix(n, series.dt, m, width=w)
    return np.tensordot(D[j], series.data, axes=(0, 0))


class _DerivCache:
    """Memoized mixed derivatives of one series at one time level."""

    def __init__(self, series: FieldSeries, j: int):
        self.series = series
        self.j = j
        self._memo: dict = {}

    def get(self, a_t: int, p: int, q: int) -> np.ndarray:
        key = (a_t, p, q)
        if key in self._memo:
            return self._memo[key]
        if q > 0:
            f = _diff_axis(
                self.get(a_t, p, q - 1), -1, 1, self.series.dy, periodic=False
            )
        elif p > 0:
            f = _diff_axis(
                self.get(a_t, p - 1, 0),
                -2,
                1,
                self.series.dx,
                periodic=self.series.x_periodic,
            )
        else:
            f = _time_deriv_at(self.series, a_t, self.j)
        self._memo[key] = f
        return f


def _quad_weights(n: int, periodic: bool) -> np.ndarray:
    """Composite weights: plain sum when periodic, else end-corrected
    trapezoid (4th order for n >= 7, trapezoid below that)."""
    w = np.ones(n)
    if periodic or n < 2:
        return w
    if n >= 7:
        w[:3] = w[-1:-4:-1] = (3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0)
    else:
        w[0] = w[-1] = 0.5
    return w


def _l2(field: np.ndarray, series: FieldSeries) -> float:
    """L2 over the window, components summed inside the integral."""
    dens = np.sum(np.abs(field) ** 2, axis=0)
    wx = _quad_weights(dens.shape[0], series.x_periodic)
    wy = _quad_weights(dens.shape[1], False)
    return math.sqrt(float(wx @ dens @ wy) * series.dx * series.dy)


def eps_norm(series: FieldSeries, spec: NormSpec, t: float) -> float:
    """Weighted norm sup over d_t,x up to s and extra d_x up to k.

    The eps weight depends only on the total counts of t-, x- and
    y-derivatives, so the sup over the two multi-index families collapses
    to the triples (a_t, p, q) with a_t <= s and p + q <= s - a_t + k.
    """
    j = series.level(t)
    cache = _DerivCache(series, j)
    best = 0.0
    for a_t in range(spec.s + 1):
        top = spec.s - a_t + spec.k
        for p in range(top + 1):
            for q in range(top - p + 1):
                val = spec.eps ** (a_t + p + q) * _l2(cache.get(a_t, p, q), series)
                best = max(best, val)
    return best


def _group_norm(cache: _DerivCache, group, s: int, eps: float, prefac: float) -> float:
    """sup over group members g of prefac * |d^g u|_{s,0,eps}."""
    series = cache.series
    best = 0.0
    for (g_t, g_p, g_q) in group:
        for a_t in range(s + 1):
            for a_x in range(s + 1 - a_t):
                for a_y in range(s + 1 - a_t - a_x):
                    f = cache.get(a_t + g_t, a_x + g_p, a_y + g_q)
                    best = max(best, prefac * eps ** (a_t + a_x + a_y) * _l2(f, series))
    return best


def energy(
    nu_series: FieldSeries,
    omega_series: FieldSeries,
    s: int,
    eps: float,
    t: float,
    consistency_tol: float = 1e-3,
) -> float:
    """Three-term error energy at time t.

    eps^2 times all spatial derivatives of nu up to second order, eps
    times the full space-time gradient of nu, and eps^2 times the full
    gradient of omega, each measured in the order-s weighted norm and
    summed.  omega is expected to be the time derivative of nu; a
    relative mismatch above consistency_tol (against a stencil
    time-derivative of nu) is reported as a warning, not an error, since
    the two fields are often produced by different discretizations.
    """
    if not (0 <= s <= _MAX_S):
        raise ValueError(f"s must lie in 0..{_MAX_S}")
    if nu_series.data.shape != omega_series.data.shape:
        raise ValueError("nu and omega must share one sample grid")
    j = nu_series.level(t)
    cn = _DerivCache(nu_series, j)
    cw = _DerivCache(omega_series, omega_series.level(t))

    dt_nu = _time_deriv_at(nu_series, 1, j)
    scale = max(_l2(omega_series.data[j], omega_series), 1e-300)
    mismatch = _l2(omega_series.data[j] - dt_nu, omega_series) / scale
    if mismatch > consistency_tol:
        warnings.warn(
            f"omega deviates from d_t nu by {mismatch:.3e} relative",
            stacklevel=2,
        )

    spatial2 = [(0, p, q) for p in range(3) for q in range(3 - p)]
    grad1 = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    return (
        _group_norm(cn, spatial2, s, eps, eps**2)
        + _group_norm(cn, grad1, s, eps, eps)
        + _group_norm(cw, grad1, s, eps, eps**2)
    )


@dataclass
class ResidualScan:
    """Interior and boundary defect norms per time level."""

    tvals: np.ndarray
    interior_sup: np.ndarray
    interior_l2: np.ndarray
    boundary_sup: np.ndarray
    boundary_l2: np.ndarray


def _flux_rows(series: FieldSeries, j: int, r: float):
    """First Piola flux T(grad U) of the level-j displacement sample."""
    U = series.data[j]
    if U.shape[0] != 2:
        raise ValueError("residual scan needs a two-component displacement")
    G = [[None, None], [None, None]]
    for i in range(2):
        G[i][0] = _diff_axis(U[i], 0, 1, series.dx, periodic=series.x_periodic)
        G[i][1] = _diff_axis(U[i], 1, 1, series.dy, periodic=False)
    return piola_full(G, r)


def residual_scan(
    series: FieldSeries,
    r: float,
    eps: float,
    g=None,
    min_ppw: float = 8.0,
) -> ResidualScan:
    """Defect of a sampled displacement in the full traction problem.

    Interior: d_t^2 U - div T(grad U) with the exact cubic flux, two rows
    per point, reported as sup and L2 over the window at every time
    level.  Boundary: the flux column (T_01, T_11) on the first y-row
    minus the prescribed traction g(t, x) (callable as in the FD solver;
    None means traction-free).  g is expected already scaled, so pass the
    eps^2-sized data itself.  The window should exclude any sponge rows;
    the first y-row must be the physical surface for the boundary part
    to mean anything.

    Warns when the sampling resolves fewer than min_ppw points per fast
    wavelength 2 pi eps in x or per fast period in t, where stencil
    error would swamp the eps-order being measured.
    """
    nt = series.tvals.size
    ppw_x = 2.0 * math.pi * eps / series.dx
    ppw_t = 2.0 * math.pi * eps / series.dt if nt > 1 else math.inf
    if min(ppw_x, ppw_t) < min_ppw:
        warnings.warn(
            f"fast scale eps = {eps} sampled at {ppw_x:.1f} ppw in x, "
            f"{ppw_t:.1f} in t (below {min_ppw}); residuals will be "
            "stencil-limited",
            stacklevel=2,
        )
    if series.data.shape[0] != nt:
        raise ValueError("series shape mismatch")

    d2t = _diff_axis(series.data, 0, 2, series.dt, periodic=False)
    i_sup = np.zeros(nt)
    i_l2 = np.zeros(nt)
    b_sup = np.zeros(nt)
    b_l2 = np.zeros(nt)
    wx = _quad_weights(series.data.shape[2], series.x_periodic)
    for j in range(nt):
        T = _flux_rows(series, j, r)
        resid = np.empty_like(series.data[j])
        for i in range(2):
            div = _diff_axis(
                T[i][0], 0, 1, series.dx, periodic=series.x_periodic
            ) + _diff_axis(T[i][1], 1, 1, series.dy, periodic=False)
            resid[i] = d2t[j, i] - div
        i_sup[j] = float(np.max(np.abs(resid)))
        i_l2[j] = _l2(resid, series)

        target = np.zeros((2, series.data.shape[2]))
        if g is not None:
            target = np.asarray(g(float(series.tvals[j]), series.xs), dtype=float)
        bres = np.stack([T[0][1][:, 0], T[1][1][:, 0]]) - target
        b_sup[j] = float(np.max(np.abs(bres)))
        b_l2[j] = math.sqrt(float((np.sum(bres**2, axis=0) * wx).sum() * series.dx))
    return ResidualScan(series.tvals.copy(), i_sup, i_l2, b_sup, b_l2)


def slope_fit(pairs) -> tuple[float, float]:
    """Least-squares slope of log value against log eps, with r^2."""
    pts = [(float(e), float(v)) for e, v in pairs]
    if len(pts) < 3:
        raise ValueError("slope fit needs at least 3 (eps, value) pairs")
    if any(e <= 0.0 or v <= 0.0 for e, v in pts):
        raise ValueError("slope fit needs positive eps and values")
    X = np.log([e for e, _ in pts])
    Y = np.log([v for _, v in pts])
    slope, icept = np.polyfit(X, Y, 1)
    fit = slope * X + icept
    ss_res = float(np.sum((Y - fit) ** 2))
    ss_tot = float(np.sum((Y - np.mean(Y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), r2


def write_norm_csv(path, rows) -> None:
    """Write (eps, t, norm_id, value) rows; repr floats for exact replay."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "t", "norm_id", "value"])
        for eps, t, norm_id, value in rows:
            w.writerow([repr(float(eps)), repr(float(t)), norm_id, repr(float(value))])


def write_verdict_json(path, verdicts: dict) -> None:
    """Dump a verdict mapping with a stable key order."""
    with open(path, "w") as fh:
        json.dump(verdicts, fh, indent=2, sort_keys=True)
        fh.write("\n")
