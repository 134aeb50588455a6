"""Amplitude solver tests.

Oracles: an O(N^2) pure-python direct summation for the bilinear operator,
spectral Duhamel quadrature for the kernel-free transport solution, and a
brute-force RK4 at tiny step for full-equation agreement.
"""

import numpy as np
import pytest

from svkwave.amplitude import (
    AmplitudeSolver,
    BlowUpError,
    History,
    ModalForcing,
    SpectralGrid,
    SpectralState,
    StabilityError,
    ZeroForcing,
    bilinear_B,
    check_kernel,
    conj_flip,
    hilbert,
    kernel_table,
    quadratic_pairing,
    reference_kernel,
    smooth_ramp,
    tame_monitor,
    zero_kernel,
)

GRID = SpectralGrid(L_x=40.0, N_x=64, n_max=8)
C_SPEED = 0.9194


def random_real_state(grid, rng, scale=0.1):
    A = scale * (rng.normal(size=(grid.N_x, grid.M)) + 1j * rng.normal(size=(grid.N_x, grid.M)))
    A *= grid.mask_x[:, None]
    s = SpectralState(grid, A, 0.0)
    s.enforce_reality()
    s.a_hat[:, grid.n_max] = 0.0  # zero theta-mean
    return s


def oracle_bilinear(a_hat, b_hat, kernel, grid):
    """Direct double loop over x points and mode pairs."""
    N = grid.n_max
    a_xn = grid.ifftx(a_hat)
    b_xn = grid.ifftx(b_hat)
    c_xn = np.zeros_like(a_xn)
    for ix in range(grid.N_x):
        for n in range(-N, N + 1):
            if n == 0:
                continue
            acc = 0.0 + 0.0j
            for npr in range(-N, N + 1):
                if npr == 0 or npr == n or abs(n - npr) > N:
                    continue
                acc += (
                    kernel.eval(-n, n - npr, npr)
                    * a_xn[ix, n - npr + N]
                    * b_xn[ix, npr + N]
                )
            c_xn[ix, n + N] = -acc / (4.0 * np.pi * kernel.c0)
    return grid.fftx(c_xn)


def test_reference_kernel_properties():
    k = reference_kernel(kappa=1.5)
    C = check_kernel(k, n_max=12)
    assert abs(C - 1.5) < 1e-12
    assert k.eval(1, 1, -2) == k.eval(-2, 1, 1) == 1.5
    assert k.eval(0, 3, 5) == 0.0
    assert k.eval(2, 2, -4) == 4 * k.eval(1, 1, -2)
    with pytest.raises(ValueError):
        check_kernel(
            type(k)(eval=lambda a, b, c: float(a), c0=1.0, name="bad"), n_max=4
        )


def test_hilbert_identities():
    rng = np.random.default_rng(1)
    s = random_real_state(GRID, rng)
    # cos(n theta) -> sin(n theta): e^{in} coefficient 1/2 -> 1/(2i)
    A = GRID.zeros()
    A[0, GRID.n_max + 3] = 0.5
    A[0, GRID.n_max - 3] = 0.5
    H = hilbert(A, GRID)
    assert abs(H[0, GRID.n_max + 3] - 0.5 / 1j) < 1e-15
    assert abs(H[0, GRID.n_max - 3] + 0.5 / 1j) < 1e-15
    # H(H(f)) = -f on zero-mean f
    HH = hilbert(hilbert(s.a_hat, GRID), GRID)
    assert np.allclose(HH, -s.a_hat, atol=1e-14)
    # reality preserved
    h = SpectralState(GRID, hilbert(s.a_hat, GRID))
    assert h.hermitian_defect() < 1e-14


@pytest.mark.parametrize("kappa", [1.0, 0.7])
def test_bilinear_matches_direct_oracle(kappa):
    grid = SpectralGrid(L_x=20.0, N_x=32, n_max=6)
    kern = reference_kernel(kappa=kappa, c0=1.3)
    rng = np.random.default_rng(4)
    a = random_real_state(grid, rng)
    b = random_real_state(grid, rng)
    got = bilinear_B(a, b, kern).a_hat
    want = oracle_bilinear(
        a.a_hat * grid.mask_x[:, None], b.a_hat * grid.mask_x[:, None], kern, grid
    ) * grid.mask_x[:, None]
    assert np.max(np.abs(got - want)) < 1e-12
    # symmetry and bilinearity
    got_ba = bilinear_B(b, a, kern).a_hat
    assert np.max(np.abs(got - got_ba)) < 1e-12
    zero = SpectralState.zero(grid)
    assert np.max(np.abs(bilinear_B(a, zero, kern).a_hat)) == 0.0
    # reality
    out = SpectralState(grid, got)
    assert out.hermitian_defect() < 1e-12


def test_bilinear_single_mode_pair():
    # a with only n = +/-1 content: the only quadratic output lives at
    # n = +/-2 through the single term n' = +/-1.
    grid = SpectralGrid(L_x=20.0, N_x=32, n_max=4)
    kern = reference_kernel()
    A = grid.zeros()
    g = 0.3 + 0.1j
    A[2, grid.n_max + 1] = g
    A[(-2) % grid.N_x, grid.n_max - 1] = np.conj(g)
    s = SpectralState(grid, A)
    out = bilinear_B(s, s, kern).a_hat
    nz = np.argwhere(np.abs(out) > 1e-15)
    assert set(nz[:, 1]) <= {grid.n_max + 2, grid.n_max - 2}
    # hand expansion: c(2) = -1/(4 pi) b(-2,1,1) a(1)^2 at x-mode 4
    want = -1.0 / (4.0 * np.pi) * kern.eval(-2, 1, 1) * g * g
    assert abs(out[4, grid.n_max + 2] - want) < 1e-14
    assert abs(out[(-4) % grid.N_x, grid.n_max - 2] - np.conj(want)) < 1e-14


def test_pairing_physical_vs_spectral():
    grid = SpectralGrid(L_x=20.0, N_x=48, n_max=6)
    kern = reference_kernel()
    rng = np.random.default_rng(9)
    u = random_real_state(grid, rng)
    v = random_real_state(grid, rng)
    spec = quadratic_pairing(u, v, kern)
    w = bilinear_B(u, v, kern)
    hw = SpectralState(grid, hilbert(w.a_hat, grid))
    P = 4 * grid.n_max + 2
    phys = (
        np.sum(u.physical(P) * hw.physical(P)) * (grid.L_x / grid.N_x) * (2 * np.pi / P)
    )
    assert abs(spec - phys) < 1e-10 * max(1.0, abs(spec))


def test_cancellation_ratio_bounded():
    grid = SpectralGrid(L_x=20.0, N_x=32, n_max=6)
    kern = reference_kernel()
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(100):
        u = random_real_state(grid, rng, scale=rng.uniform(0.01, 1.0))
        v = random_real_state(grid, rng, scale=rng.uniform(0.01, 1.0))
        num = abs(quadratic_pairing(u, v, kern))
        den = v.norm_h(4) * u.norm_h(0) ** 2
        if den > 0:
            worst = max(worst, num / den)
    assert worst < 10.0  # observed ~1e-2; generous ceiling guards regressions


def test_zero_data_stays_zero():
    solver = AmplitudeSolver(GRID, kernel=reference_kernel(), c=C_SPEED)
    hist = solver.solve(ZeroForcing(GRID), T=1.0, dt=0.05)
    assert np.max(np.abs(hist.final().a_hat)) < 1e-14


def test_kernel_zero_gives_transport():
    grid = SpectralGrid(L_x=40.0, N_x=64, n_max=4)
    solver = AmplitudeSolver(grid, kernel=zero_kernel(), c=C_SPEED)
    forcing = ModalForcing(grid, {1: 1.0, 2: 0.5j}, width=3.0, t0=0.5)
    T, dt = 2.0, 0.02
    hist = solver.solve(forcing, T=T, dt=dt)
    # characteristics solution, spectrally: a(T) = int_0^T e^{-i c xi (T-s)} G(s) ds
    M = 8 * int(T / dt)
    s_nodes, w = np.linspace(0.0, T, 2 * M + 1, retstep=True)
    acc = np.zeros((grid.N_x, grid.M), dtype=complex)
    simpson = np.ones(2 * M + 1)
    simpson[1:-1:2], simpson[2:-1:2] = 4.0, 2.0
    for s, cw in zip(s_nodes, simpson):
        acc += cw * np.exp(-1j * C_SPEED * grid.xi[:, None] * (T - s)) * forcing.spectrum(s)
    acc *= w / 3.0
    err = np.max(np.abs(hist.final().a_hat - acc))
    assert err < 1e-8


def test_two_steps_match_tiny_rk4_oracle():
    grid = SpectralGrid(L_x=20.0, N_x=16, n_max=3)
    kern = reference_kernel()
    solver = AmplitudeSolver(grid, kernel=kern, c=C_SPEED)
    forcing = ModalForcing(grid, {1: 1.0}, width=2.0, t0=0.2, amplitude=2.0)
    dt = 0.01
    st = SpectralState.zero(grid)
    for _ in range(2):
        st = solver.step(st, forcing, dt)

    table = kernel_table(kern, grid)
    idx, ok = grid.shift_tables()
    W = table * ok

    def rhs(t, A):
        a_xn = grid.ifftx(A * grid.mask_x[:, None])
        c_xn = np.einsum("xnm,nm,xm->xn", a_xn[:, idx], W, a_xn)
        C = grid.fftx(c_xn) * grid.mask_x[:, None]
        H = C * (-1j * np.sign(grid.nvals))[None, :]
        return (
            -1j * C_SPEED * grid.xi[:, None] * A - H + forcing.spectrum(t)
        )

    A = grid.zeros()
    h = 1e-4
    t = 0.0
    for _ in range(int(round(2 * dt / h))):
        k1 = rhs(t, A)
        k2 = rhs(t + h / 2, A + h / 2 * k1)
        k3 = rhs(t + h / 2, A + h / 2 * k2)
        k4 = rhs(t + h, A + h * k3)
        A = A + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    assert np.max(np.abs(st.a_hat - A)) < 1e-8


def test_solver_reality_and_mean_preserved():
    solver = AmplitudeSolver(GRID, kernel=reference_kernel(), c=C_SPEED)
    forcing = ModalForcing(GRID, {1: 1.0, 3: 0.2}, t0=0.5)
    hist = solver.solve(forcing, T=1.5, dt=0.02)
    f = hist.final()
    assert f.hermitian_defect() < 1e-11
    assert np.max(np.abs(f.a_hat[:, GRID.n_max])) < 1e-13


def test_linearized_directional_derivative():
    grid = SpectralGrid(L_x=40.0, N_x=64, n_max=4)
    kern = reference_kernel()
    solver = AmplitudeSolver(grid, kernel=kern, c=C_SPEED)
    G2 = ModalForcing(grid, {1: 1.0}, t0=0.5, amplitude=1.0)
    Gk = ModalForcing(grid, {2: 0.5}, t0=0.5, amplitude=1.0, width=2.0)
    T, dt = 1.2, 0.01
    base = solver.solve(G2, T=T, dt=dt)
    lin = solver.solve_linearized(base, Gk, T=T, dt=dt)

    class Sum:
        def __init__(self, h):
            self.h = h

        def spectrum(self, t):
            return G2.spectrum(t) + self.h * Gk.spectrum(t)

    errs = []
    for h in (1e-3, 1e-4):
        pert = solver.solve(Sum(h), T=T, dt=dt)
        diff = (pert.final().a_hat - base.final().a_hat) / h
        errs.append(np.max(np.abs(diff - lin.final().a_hat)))
    ratio = errs[0] / errs[1]
    assert 5.0 < ratio < 20.0  # first-order convergence of the FD linearization


def test_linearized_trivial_cases():
    grid = SpectralGrid(L_x=40.0, N_x=32, n_max=3)
    solver = AmplitudeSolver(grid, kernel=reference_kernel(), c=C_SPEED)
    empty = History(grid)
    empty.record_state(SpectralState.zero(grid))
    lin = solver.solve_linearized(empty, ZeroForcing(grid), T=0.5, dt=0.05)
    assert np.max(np.abs(lin.final().a_hat)) < 1e-14
    # zero base reduces to pure transport of the forcing
    Gk = ModalForcing(grid, {1: 1.0}, t0=0.3)
    lin2 = solver.solve_linearized(empty, Gk, T=0.5, dt=0.01)
    nok = AmplitudeSolver(grid, kernel=zero_kernel(), c=C_SPEED)
    ref = nok.solve(Gk, T=0.5, dt=0.01)
    assert np.max(np.abs(lin2.final().a_hat - ref.final().a_hat)) < 1e-12


def test_tame_monitor_zero_and_bump():
    solver = AmplitudeSolver(GRID, kernel=reference_kernel(), c=C_SPEED)
    zhist = solver.solve(ZeroForcing(GRID), T=0.4, dt=0.05, track_norms=(4, 5))
    _, ratios = tame_monitor(zhist, m=5, m1=4)
    assert np.all(ratios == 0.0)
    forcing = ModalForcing(GRID, {1: 1.0, 2: 0.3}, t0=0.5)
    hist = solver.solve(forcing, T=1.0, dt=0.02, track_norms=(4, 5, 6, 7))
    bounds = []
    for m in (5, 6, 7):
        _, ratios = tame_monitor(hist, m=m, m1=4)
        bounds.append(np.max(ratios[5:]))
    bounds = np.array(bounds)
    assert np.all(np.isfinite(bounds))
    assert np.max(bounds) < 3.0 * max(np.min(bounds), 1e-12)


def test_guards():
    grid = SpectralGrid(L_x=20.0, N_x=32, n_max=4)
    solver = AmplitudeSolver(grid, kernel=reference_kernel(), c=C_SPEED, ceiling=1e-6)
    forcing = ModalForcing(grid, {1: 1.0}, width=2.0, t0=0.2)
    with pytest.raises(BlowUpError):
        solver.solve(forcing, T=1.0, dt=0.02)
    solver2 = AmplitudeSolver(grid, kernel=reference_kernel(), c=C_SPEED)
    rng = np.random.default_rng(3)
    big = random_real_state(grid, rng, scale=50.0)
    with pytest.raises(StabilityError):
        solver2.step(big, ZeroForcing(grid), dt=1.0)


def test_ramp_flat_at_zero():
    assert smooth_ramp(-1.0) == 0.0 and smooth_ramp(0.0) == 0.0
    ts = np.linspace(0.01, 3.0, 50)
    vals = [smooth_ramp(t, 0.7) for t in ts]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert smooth_ramp(1e-3) < 1e-300 or smooth_ramp(1e-3) == 0.0


def test_state_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    s = random_real_state(GRID, rng)
    s.t = 1.25
    p = tmp_path / "snap.svkc"
    s.save(p, extra_meta={"note": "test"})
    s2 = SpectralState.load(p)
    assert s2.grid == GRID
    assert s2.t == 1.25
    assert np.array_equal(s2.a_hat, s.a_hat)


def test_history_interp_cubic():
    # cubic-in-t data is reproduced exactly by 4-point Lagrange interpolation
    hist = History(GRID)
    for i in range(6):
        t = 0.2 * i
        A = GRID.zeros()
        A[0, GRID.n_max + 1] = t**3 - 2 * t + 1
        hist.times.append(t)
        hist.stack.append(A)
    for t in (0.1, 0.35, 0.77, 0.99):
        got = hist.interp(t)[0, GRID.n_max + 1]
        assert abs(got - (t**3 - 2 * t + 1)) < 1e-13
