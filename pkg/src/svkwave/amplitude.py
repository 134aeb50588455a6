"""Pseudospectral solver for the nonlocal amplitude equation.

The leading boundary amplitude alpha(t, x, theta) obeys a nonlocal
Burgers-type law

    d_t alpha + c d_x alpha + H(B(alpha, alpha)) = G,

with H the Hilbert transform in the periodic phase theta and B a symmetric
bilinear Fourier multiplier whose kernel b is degree-2 homogeneous.  The
physical kernel is not pinned down here; the solver is kernel-generic and
ships a compliant reference kernel.

Discretization: Fourier in x (periodic box, 2/3-masked) and sharp Galerkin
truncation |n| <= n_max in theta with the convolution summed directly, so
the phase axis has no aliasing by construction.  Time stepping is RK4 with
an exact integrating factor for the transport term.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import containers

__all__ = [
    "SpectralGrid",
    "SpectralState",
    "Kernel",
    "reference_kernel",
    "zero_kernel",
    "kernel_table",
    "check_kernel",
    "hilbert",
    "bilinear_B",
    "ModalForcing",
    "smooth_ramp",
    "AmplitudeSolver",
    "History",
    "tame_monitor",
    "quadratic_pairing",
    "BlowUpError",
    "StabilityError",
]


class BlowUpError(RuntimeError):
    """Solution norm exceeded the configured ceiling (possible blow-up)."""

    def __init__(self, t, norm, ceiling):
        super().__init__(f"H-norm {norm:.3e} exceeded ceiling {ceiling:.3e} at t = {t:.6g}")
        self.t = t
        self.norm = norm


class StabilityError(RuntimeError):
    """Time step exceeds the quasilinear stability bound."""


# ---------------------------------------------------------------------------
# grids and states


@dataclass(frozen=True)
class SpectralGrid:
    """Periodic box x in [0, L_x) with N_x points; theta modes |n| <= n_max.

    Spectra are stored as normalized coefficients A[m, j] with the x axis in
    FFT frequency order and the theta axis indexed j = n + n_max, so that
    alpha(x, theta) = sum A[m, n] exp(i xi_m x + i n theta).
    """

    L_x: float = 40.0
    N_x: int = 128
    n_max: int = 8

    def __post_init__(self):
        if self.N_x < 8 or self.N_x % 2:
            raise ValueError("N_x must be even and >= 8")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")

    @property
    def M(self) -> int:
        return 2 * self.n_max + 1

    @property
    def xi(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.N_x, d=self.L_x / self.N_x)

    @property
    def nvals(self) -> np.ndarray:
        return np.arange(-self.n_max, self.n_max + 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N_x) * (self.L_x / self.N_x)

    @property
    def mask_x(self) -> np.ndarray:
        # 2/3 rule on the x axis; products are pointwise in x
        cut = self.N_x // 3
        m = np.abs(np.fft.fftfreq(self.N_x) * self.N_x) <= cut
        return m

    def zeros(self) -> np.ndarray:
        return np.zeros((self.N_x, self.M), dtype=complex)

    def fftx(self, a_xn: np.ndarray) -> np.ndarray:
        return np.fft.fft(a_xn, axis=0) / self.N_x

    def ifftx(self, A: np.ndarray) -> np.ndarray:
        return np.fft.ifft(A * self.N_x, axis=0)

    def neg_x_index(self) -> np.ndarray:
        return (-np.arange(self.N_x)) % self.N_x

    def shift_tables(self):
        """Gather index and validity for the theta-mode difference n - n'."""
        nn = self.nvals
        diff = nn[:, None] - nn[None, :]
        ok = np.abs(diff) <= self.n_max
        idx = np.clip(diff + self.n_max, 0, self.M - 1)
        return idx, ok


def conj_flip(grid: SpectralGrid, A: np.ndarray) -> np.ndarray:
    """A(-xi, -n) conjugated; equals A itself iff the field is real."""
    return np.conj(A[grid.neg_x_index()][:, ::-1])


@dataclass
class SpectralState:
    """Spectrum of a real field alpha(t, x, theta) at one time."""

    grid: SpectralGrid
    a_hat: np.ndarray
    t: float = 0.0

    @classmethod
    def zero(cls, grid: SpectralGrid, t: float = 0.0) -> "SpectralState":
        return cls(grid, grid.zeros(), t)

    def copy(self) -> "SpectralState":
        return SpectralState(self.grid, self.a_hat.copy(), self.t)

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.a_hat - conj_flip(self.grid, self.a_hat))))

    def enforce_reality(self) -> None:
        self.a_hat = 0.5 * (self.a_hat + conj_flip(self.grid, self.a_hat))

    def physical(self, n_theta_pts: int | None = None) -> np.ndarray:
        """Real field on the (x, theta) collocation grid."""
        g = self.grid
        P = n_theta_pts or max(3 * g.n_max + 1, 8)
        thetas = 2.0 * np.pi * np.arange(P) / P
        E = np.exp(1j * np.outer(g.nvals, thetas))
        a_xn = g.ifftx(self.a_hat)
        return np.real(a_xn @ E)

    def norm_h(self, m: int) -> float:
        """Sobolev norm via the bracket multiplier (1 + xi^2 + n^2)^m."""
        g = self.grid
        w = (1.0 + g.xi[:, None] ** 2 + g.nvals[None, :] ** 2) ** m
        s = np.sum(w * np.abs(self.a_hat) ** 2)
        return float(np.sqrt(2.0 * np.pi * g.L_x * s))

    def sup_bound(self) -> float:
        """Cheap pointwise bound sup |alpha| <= sum_n max_x |a(x, n)|."""
        a_xn = self.grid.ifftx(self.a_hat)
        return float(np.sum(np.max(np.abs(a_xn), axis=0)))

    def save(self, path, extra_meta: dict | None = None) -> None:
        g = self.grid
        meta = {
            "kind": "spectral_state",
            "t": self.t,
            "L_x": g.L_x,
            "N_x": g.N_x,
            "n_max": g.n_max,
        }
        if extra_meta:
            meta.update(extra_meta)
        containers.save_arrays(path, meta, {"a_hat": self.a_hat})

    @classmethod
    def load(cls, path) -> "SpectralState":
        meta, arrays = containers.load_arrays(path)
        if meta.get("kind") != "spectral_state":
            raise containers.ContainerError(f"{path}: not a spectral state")
        grid = SpectralGrid(L_x=meta["L_x"], N_x=meta["N_x"], n_max=meta["n_max"])
        return cls(grid, arrays["a_hat"].copy(), meta["t"])


# ---------------------------------------------------------------------------
# kernels and the bilinear operator


@dataclass(frozen=True)
class Kernel:
    """Symmetric, degree-2 homogeneous, real kernel b(n1, n2, n3) plus c0."""

    eval: Callable[[int, int, int], float]
    c0: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if self.c0 <= 0:
            raise ValueError("c0 must be positive")


def reference_kernel(kappa: float = 1.0, c0: float = 1.0) -> Kernel:
    """b = kappa |n1 n2 n3| / max|n_i|, zero when any argument is zero.

    Symmetric, homogeneous of degree two, and |b| equals kappa times the
    smallest pairwise product, so the pairwise bound holds with C = kappa.
    """

    def b(n1: int, n2: int, n3: int) -> float:
        if n1 == 0 or n2 == 0 or n3 == 0:
            return 0.0
        a1, a2, a3 = abs(n1), abs(n2), abs(n3)
        return kappa * a1 * a2 * a3 / max(a1, a2, a3)

    return Kernel(eval=b, c0=c0, name=f"reference(kappa={kappa})")


def zero_kernel() -> Kernel:
    return Kernel(eval=lambda n1, n2, n3: 0.0, c0=1.0, name="zero")


def kernel_table(kernel: Kernel, grid: SpectralGrid) -> np.ndarray:
    """W[n, n'] with c_hat(n) = sum_{n'} W[n, n'] a_hat(n-n') b_hat(n').

    Folds in the -1/(4 pi c0) normalization and the exclusions n' != 0,
    n' != n, plus the truncation |n - n'| <= n_max.
    """
    N = grid.n_max
    W = np.zeros((grid.M, grid.M), dtype=complex)
    pref = -1.0 / (4.0 * np.pi * kernel.c0)
    for i, n in enumerate(grid.nvals):
        if n == 0:
            continue
        for j, np_ in enumerate(grid.nvals):
            if np_ == 0 or np_ == n or abs(n - np_) > N:
                continue
            W[i, j] = pref * kernel.eval(-n, n - np_, np_)
    return W


def check_kernel(kernel: Kernel, n_max: int = 12) -> float:
    """Verify symmetry, positive-scaling homogeneity, and the pairwise bound.

    Returns the smallest constant C with |b| <= C min pairwise product.
    Raises ValueError on a violated structural property.
    """
    rng = np.random.default_rng(0)
    C = 0.0
    for _ in range(400):
        n1, n2, n3 = rng.integers(-n_max, n_max + 1, size=3)
        v = kernel.eval(n1, n2, n3)
        for perm in [(n2, n1, n3), (n1, n3, n2), (n3, n2, n1)]:
            if abs(kernel.eval(*perm) - v) > 1e-12 * max(1.0, abs(v)):
                raise ValueError(f"kernel not symmetric at {(n1, n2, n3)}")
        if 0 in (n1, n2, n3):
            if v != 0.0:
                raise ValueError("kernel must vanish on zero modes")
            continue
        for m in (2, 3):
            if abs(kernel.eval(m * n1, m * n2, m * n3) - m * m * v) > 1e-9 * max(
                1.0, abs(v)
            ):
                raise ValueError(f"kernel not degree-2 homogeneous at {(n1, n2, n3)}")
        pairmin = min(abs(n1 * n2), abs(n2 * n3), abs(n1 * n3))
        C = max(C, abs(v) / pairmin)
    return C


def hilbert(a_hat: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Periodic Hilbert transform in theta: multiplier -i sgn(n)."""
    mult = -1j * np.sign(grid.nvals)
    return a_hat * mult[None, :]


class _BilinearWork:
    """Precomputed tables for the direct-summation bilinear operator."""

    def __init__(self, grid: SpectralGrid, table: np.ndarray):
        self.grid = grid
        idx, ok = grid.shift_tables()
        self.idx = idx
        self.W = table * ok  # invalid gathers contribute nothing
        self.mask_x = grid.mask_x

    def modal(self, a_xn: np.ndarray, b_xn: np.ndarray) -> np.ndarray:
        # per x-point: c(n) = sum_{n'} W[n, n'] a(n - n') b(n')
        G = a_xn[:, self.idx]
        return np.einsum("xnm,nm,xm->xn", G, self.W, b_xn, optimize=True)

    def spectral(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        g = self.grid
        a_xn = g.ifftx(A * self.mask_x[:, None])
        b_xn = g.ifftx(B * self.mask_x[:, None])
        C = g.fftx(self.modal(a_xn, b_xn))
        return C * self.mask_x[:, None]


def bilinear_B(a: SpectralState, b: SpectralState, kernel: Kernel) -> SpectralState:
    """B(a, b) as a new state on the shared grid; symmetric in (a, b)."""
    if a.grid != b.grid:
        raise ValueError("operands live on different grids")
    work = _BilinearWork(a.grid, kernel_table(kernel, a.grid))
    return SpectralState(a.grid, work.spectral(a.a_hat, b.a_hat), a.t)


def quadratic_pairing(
    u: SpectralState, v: SpectralState, kernel: Kernel
) -> float:
    """int u H(B(u, v)) dx dtheta, evaluated spectrally (u, v real)."""
    w = bilinear_B(u, v, kernel)
    hw = hilbert(w.a_hat, u.grid)
    s = np.sum(np.conj(u.a_hat) * hw)
    return float(np.real(2.0 * np.pi * u.grid.L_x * s))


# ---------------------------------------------------------------------------
# forcing


def smooth_ramp(t: float, t0: float = 1.0) -> float:
    """0 for t <= 0, exp(-t0/t) for t > 0; flat to infinite order at 0."""
    if t <= 0.0:
        return 0.0
    return math.exp(-t0 / t)


class ModalForcing:
    """G(t, x, theta) = ramp(t) * envelope(x) * sum_n 2 Re[g_n e^{i n theta}].

    The x envelope is a Gaussian bump well separated from the wrap seam;
    theta modes must exclude n = 0 (zero phase mean) unless allow_mean.
    """

    def __init__(
        self,
        grid: SpectralGrid,
        theta_modes: dict,
        x0: float | None = None,
        width: float = 3.0,
        t0: float = 1.0,
        amplitude: float = 1.0,
        allow_mean: bool = False,
    ):
        for n in theta_modes:
            if n == 0 and not allow_mean:
                raise ValueError("theta mode 0 breaks the zero-mean assumption")
            if n < 0:
                raise ValueError("give positive modes; conjugates are implied")
            if n > grid.n_max:
                raise ValueError(f"theta mode {n} outside resolved band")
        self.grid = grid
        self.t0 = t0
        x0 = grid.L_x / 2.0 if x0 is None else x0
        env = np.exp(-(((grid.x - x0) / width) ** 2))
        seam = abs(env[0]) + abs(env[-1])
        if seam > 1e-8 * np.max(np.abs(env)):
            raise ValueError("x envelope touches the periodic seam")
        env_hat = np.fft.fft(env) / grid.N_x * grid.mask_x
        base = grid.zeros()
        for n, g in theta_modes.items():
            if n == 0:
                base[:, grid.n_max] += np.real(g) * env_hat
            else:
                base[:, n + grid.n_max] += g * env_hat
                base[:, -n + grid.n_max] += np.conj(g) * env_hat
        self.base = amplitude * base

    def spectrum(self, t: float) -> np.ndarray:
        r = smooth_ramp(t, self.t0)
        if r == 0.0:
            return self.grid.zeros()
        return r * self.base


class ZeroForcing:
    def __init__(self, grid: SpectralGrid):
        self.grid = grid

    def spectrum(self, t: float) -> np.ndarray:
        return self.grid.zeros()


# ---------------------------------------------------------------------------
# histories


class History:
    """Recorded solver output: states at a cadence, norm series every step."""

    def __init__(self, grid: SpectralGrid):
        self.grid = grid
        self.times: list[float] = []
        self.stack: list[np.ndarray] = []
        self.norm_times: list[float] = []
        self.norm_series: dict[int, list[float]] = {}

    def record_state(self, state: SpectralState) -> None:
        self.times.append(state.t)
        self.stack.append(state.a_hat.copy())

    def record_norms(self, state: SpectralState, ms) -> None:
        self.norm_times.append(state.t)
        for m in ms:
            self.norm_series.setdefault(m, []).append(state.norm_h(m))

    def state_at(self, i: int) -> SpectralState:
        return SpectralState(self.grid, self.stack[i].copy(), self.times[i])

    def final(self) -> SpectralState:
        return self.state_at(len(self.stack) - 1)

    def interp(self, t: float) -> np.ndarray:
        """Cubic Lagrange interpolation on the recorded (uniform) times."""
        ts = self.times
        if not ts:
            raise ValueError("empty history")
        if len(ts) == 1 or t <= ts[0]:
            return self.stack[0]
        if t >= ts[-1]:
            return self.stack[-1]
        dt = ts[1] - ts[0]
        j = int((t - ts[0]) / dt)
        j0 = min(max(j - 1, 0), len(ts) - 4)
        out = np.zeros_like(self.stack[0])
        for a in range(4):
            w = 1.0
            for b in range(4):
                if a != b:
                    w *= (t - ts[j0 + b]) / (ts[j0 + a] - ts[j0 + b])
            out += w * self.stack[j0 + a]
        return out


def tame_monitor(history: History, m: int, m1: int):
    """|d/dt ||u||_{H^m}^2| / (||u||_{H^m}^2 ||u||_{H^m1}) per recorded step.

    Centered differences on the recorded norm series; zero states give 0.
    """
    if m1 < 4:
        raise ValueError("m1 must be at least 4 (above d/2 + 2 with d = 2)")
    if m < m1:
        raise ValueError("m must be >= m1")
    if m not in history.norm_series or m1 not in history.norm_series:
        raise ValueError("norms were not tracked; pass track_norms to solve")
    ts = np.asarray(history.norm_times)
    nm = np.asarray(history.norm_series[m])
    nm1 = np.asarray(history.norm_series[m1])
    sq = nm**2
    ratios = np.zeros(len(ts))
    for i in range(1, len(ts) - 1):
        denom = sq[i] * nm1[i]
        if denom < 1e-300:
            continue
        d = (sq[i + 1] - sq[i - 1]) / (ts[i + 1] - ts[i - 1])
        ratios[i] = abs(d) / denom
    return ts, ratios


# ---------------------------------------------------------------------------
# the solver


class AmplitudeSolver:
    """Owns one grid, one kernel table, and the transport speed c."""

    def __init__(
        self,
        grid: SpectralGrid,
        kernel: Kernel | None = None,
        table: np.ndarray | None = None,
        c: float = 0.9194,
        cfl: float = 0.5,
        ceiling: float = 1e3,
        m1: int = 4,
        check_every: int = 1,
    ):
        if (kernel is None) == (table is None):
            raise ValueError("give exactly one of kernel or table")
        if table is None:
            table = kernel_table(kernel, grid)
        self.grid = grid
        self.work = _BilinearWork(grid, table)
        self.c = c
        self.cfl = cfl
        self.ceiling = ceiling
        self.m1 = m1
        self.check_every = check_every
        self._step_count = 0

    # -- right-hand side ----------------------------------------------------

    def _nonlinear(self, A: np.ndarray, coef: float, frozen=None) -> np.ndarray:
        """-coef * H(B(arg1, arg2)) in spectral form."""
        g = self.grid
        if frozen is None:
            C = self.work.spectral(A, A)
        else:
            C = self.work.spectral(frozen, A)
        return -coef * hilbert(C, g)

    def _rhs(self, t, A, forcing, coef, frozen_interp):
        frozen = frozen_interp(t) if frozen_interp is not None else None
        return self._nonlinear(A, coef, frozen) + forcing.spectrum(t)

    def step(
        self,
        state: SpectralState,
        forcing,
        dt: float,
        coef: float = 1.0,
        frozen_interp=None,
    ) -> SpectralState:
        """One RK4 step with exact integrating factor for c d_x."""
        g = self.grid
        A, t = state.a_hat, state.t
        amp = state.sup_bound()
        if amp > 0 and dt > self.cfl / (g.n_max * amp):
            raise StabilityError(
                f"dt = {dt:.3e} exceeds bound {self.cfl / (g.n_max * amp):.3e} "
                f"at t = {t:.6g}; reduce dt"
            )
        L = -1j * self.c * g.xi[:, None]
        E = np.exp(L * (0.5 * dt))
        E2 = E * E
        k1 = self._rhs(t, A, forcing, coef, frozen_interp)
        k2 = self._rhs(t + 0.5 * dt, E * (A + 0.5 * dt * k1), forcing, coef, frozen_interp)
        k3 = self._rhs(t + 0.5 * dt, E * A + 0.5 * dt * k2, forcing, coef, frozen_interp)
        k4 = self._rhs(t + dt, E2 * A + dt * E * k3, forcing, coef, frozen_interp)
        A_new = E2 * A + (dt / 6.0) * (E2 * k1 + 2.0 * E * (k2 + k3) + k4)
        out = SpectralState(g, A_new, t + dt)
        self._step_count += 1
        if self._step_count % self.check_every == 0:
            defect = out.hermitian_defect()
            scale = max(1.0, float(np.max(np.abs(A_new))))
            if defect > 1e-10 * scale:
                raise RuntimeError(f"reality lost: hermitian defect {defect:.3e}")
            out.enforce_reality()
            nrm = out.norm_h(self.m1)
            if nrm > self.ceiling:
                raise BlowUpError(out.t, nrm, self.ceiling)
        return out

    def _march(
        self,
        forcing,
        T: float,
        dt: float,
        state0: SpectralState | None,
        record_every: int,
        track_norms,
        coef: float,
        frozen_interp,
    ) -> History:
        state = state0.copy() if state0 is not None else SpectralState.zero(self.grid)
        nsteps = max(1, int(math.ceil((T - state.t) / dt - 1e-12)))
        dt = (T - state.t) / nsteps
        hist = History(self.grid)
        hist.record_state(state)
        if track_norms:
            hist.record_norms(state, track_norms)
        for i in range(nsteps):
            state = self.step(state, forcing, dt, coef, frozen_interp)
            if track_norms:
                hist.record_norms(state, track_norms)
            if (i + 1) % record_every == 0 or i == nsteps - 1:
                hist.record_state(state)
        return hist

    def solve(
        self,
        forcing,
        T: float,
        dt: float,
        state0: SpectralState | None = None,
        record_every: int = 1,
        track_norms=(),
    ) -> History:
        """March the quadratic equation from zero (or state0) to time T."""
        return self._march(forcing, T, dt, state0, record_every, track_norms, 1.0, None)

    def solve_linearized(
        self,
        base: History,
        forcing,
        T: float,
        dt: float,
        record_every: int = 1,
        track_norms=(),
    ) -> History:
        """March d_t a + c d_x a + 2 H(B(base, a)) = G with frozen base."""
        base_xn_cache: dict[float, np.ndarray] = {}

        def frozen(t: float) -> np.ndarray:
            if t not in base_xn_cache:
                if len(base_xn_cache) > 64:
                    base_xn_cache.clear()
                base_xn_cache[t] = base.interp(t)
            return base_xn_cache[t]

        return self._march(forcing, T, dt, None, record_every, track_norms, 2.0, frozen)
