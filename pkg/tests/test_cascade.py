"""Profile-cascade tests.

Oracles: closed-form piola fluxes against the tensor-contraction route
and a scaling fit of the multilinear split, residual substitution for
every mode solve, manufactured boundary preimages for the restricted
Lopatinski inverse, a manufactured smooth solution for the slow mean
march, and the manufactured amplitude closure identity for the
solvability pairing.  The end-to-end build is checked against its own
sealed data (order residuals), structural zero claims at the first
order, and a serialization round trip.
"""

import numpy as np
import pytest

from svkwave.amplitude import SpectralGrid
from svkwave.cascade import (
    CascadeBuilder,
    CascadeRHS,
    CascadeSet,
    FluxTables,
    TractionForcing,
    alpha_mode_shape,
    apply_fast_ops,
    assemble_approx,
    cascade_rhs,
    check_solvability,
    decompose_flux,
    extract_table,
    extract_transport,
    level_pairing,
    modify_rhs,
    order_residuals,
    solvability_oracle,
    solve_homogeneous,
    solve_mean_field,
    solve_particular,
    solve_zero_mode,
)
from svkwave.dispersion import (
    SolvabilityError,
    boundary_trace_matrix,
    rayleigh_data,
)
from svkwave.diagnostics import slope_fit
from svkwave.exppoly import ExpPoly
from svkwave.slowgrid import SlowGrid

RAY = rayleigh_data(3.0)


@pytest.fixture(scope="module")
def built():
    """One production-shaped N=4 build shared by the integration tests."""
    grid = SpectralGrid(L_x=12.0, N_x=32, n_max=2)
    slow = SlowGrid(grid, T=4.0, N_t=128)
    forcing = TractionForcing(
        modes={1: (0.02, 0.01), 2: (0.008, -0.004)},
        x0=6.0,
        width=1.3,
        t0=1.0,
    )
    return CascadeBuilder(RAY, slow, forcing, N=4).build()


def tiny_slow(n_max=2, N_x=16, N_t=8):
    return SlowGrid(SpectralGrid(L_x=2 * np.pi, N_x=N_x, n_max=n_max), T=1.0, N_t=N_t)


# -- flux split -------------------------------------------------------------


def test_decompose_flux_matches_closed_form():
    from svkwave.flux import piola_cubic, piola_full, piola_linear, piola_quadratic

    rng = np.random.default_rng(2)
    G = rng.normal(size=(2, 2))
    Gn = tuple(map(tuple, G))
    T1, T2, T3 = decompose_flux(Gn, 3.0)
    for got, want in (
        (T1, piola_linear(Gn, 3.0)),
        (T2, piola_quadratic(Gn, Gn, 3.0)),
        (T3, piola_cubic(Gn, Gn, Gn, 3.0)),
    ):
        assert np.max(np.abs(np.asarray(got) - np.asarray(want))) < 1e-13
    full = np.asarray(piola_full(Gn, 3.0))
    assert np.max(np.abs(T1 + T2 + T3 - full)) < 1e-13


def test_flux_split_is_the_multilinear_expansion():
    # T(sG) = s T1 + s^2 T2 + s^3 T3: solve for the parts from three
    # scalings of the full flux and compare (independent of the tensors)
    from svkwave.flux import piola_full

    rng = np.random.default_rng(7)
    G = rng.normal(size=(2, 2)) * 0.3
    Gn = tuple(map(tuple, G))
    T1, T2, T3 = decompose_flux(Gn, 2.5)
    svals = (0.5, 1.0, 2.0)
    V = np.array([[s, s**2, s**3] for s in svals])
    votes = np.linalg.solve(
        V,
        np.stack(
            [
                np.asarray(piola_full(tuple(map(tuple, s * G)), 2.5)).ravel()
                for s in svals
            ]
        ),
    )
    for got, want in zip((T1, T2, T3), votes):
        assert np.max(np.abs(np.asarray(got).ravel() - want)) < 1e-12


# -- fast mode solves -------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3])
def test_alpha_shape_solves_interior_and_traction(n):
    u, v = alpha_mode_shape(n, RAY)
    int_u, int_v, tr = apply_fast_ops(n, u, v, RAY)
    assert int_u.max_abs() < 1e-12
    assert int_v.max_abs() < 1e-12
    C = boundary_trace_matrix(n, RAY.r)
    tr4 = np.array(
        [u.value_at_zero(), v.value_at_zero(), u.diff().value_at_zero(),
         v.diff().value_at_zero()]
    )
    assert np.max(np.abs(C @ tr4)) < 1e-12


def test_solve_zero_mode_example():
    H0 = ExpPoly.expterm(-1.0 + 0j, [1.0])  # e^{-Y}
    u, v = solve_zero_mode(H0, ExpPoly.zero(), RAY.r)
    assert v.is_zero()
    # -u'' = e^{-Y} with decay forces u = -e^{-Y}
    assert abs(u.value_at_zero() + 1.0) < 1e-14
    assert (u.diff().diff().scale(-1.0) + H0.scale(-1.0)).max_abs() < 1e-13
    # surface slope equals the integral of the data
    assert abs(u.diff().value_at_zero() - H0.integral_zero_inf()) < 1e-14


def test_solve_particular_residual_resonant_and_conj():
    n = 1
    lam_res = 1j * n * RAY.omega1
    Hn = ExpPoly([(lam_res, [0.4 + 0.1j]), (-1.5 + 0j, [0.2])])
    Kn = ExpPoly([(-0.8 + 0j, [0.15 - 0.05j])])
    up, vp, tr4 = solve_particular(n, Hn, Kn, RAY)
    int_u, int_v, _ = apply_fast_ops(n, up, vp, RAY)
    scale = max(Hn.max_abs(), Kn.max_abs())
    assert (int_u + Hn.scale(-1.0)).max_abs() < 1e-11 * scale
    assert (int_v + Kn.scale(-1.0)).max_abs() < 1e-11 * scale
    # resonant forcing must produce polynomial-in-Y content at its exponent
    assert any(
        abs(lam - lam_res) < 1e-12 and len(coeffs) >= 2 for lam, coeffs in up.terms
    )
    # the conjugate mode solves the conjugate data: applying the operator
    # at -n to the conjugated pair reproduces the conjugated interior data
    cu, cv = up.conj(), vp.conj()
    int_cu, int_cv, _ = apply_fast_ops(-n, cu, cv, RAY)
    assert (int_cu + Hn.conj().scale(-1.0)).max_abs() < 1e-11 * scale
    assert (int_cv + Kn.conj().scale(-1.0)).max_abs() < 1e-11 * scale


def test_solve_particular_zero():
    up, vp, tr4 = solve_particular(2, ExpPoly.zero(), ExpPoly.zero(), RAY)
    assert up.is_zero() and vp.is_zero()
    assert np.max(np.abs(np.asarray(tr4, dtype=complex))) == 0.0


def test_solve_homogeneous_preimage_and_trace():
    n, shape = 2, (5, 8)
    k = np.array(RAY.ker_vec)
    sig0 = np.array([0.3 + 0.2j, -0.1 + 0.5j])
    sig = sig0 - (np.vdot(k, sig0) / np.vdot(k, k)) * k  # perp to kernel
    rhs_vec = 1j * n * (np.asarray(RAY.B_lop) @ sig)
    rhs = np.broadcast_to(rhs_vec[:, None, None], (2, *shape)).copy()
    uh, vh, dd = solve_homogeneous(n, rhs, RAY, rtol=1e-8, what="test")
    assert dd < 1e-12 * np.max(np.abs(rhs))
    # the defining property: the traction trace reproduces the data
    C = boundary_trace_matrix(n, RAY.r)
    tr4 = np.array(
        [uh.value_at_zero(), vh.value_at_zero(), uh.diff().value_at_zero(),
         vh.diff().value_at_zero()]
    )
    got = np.einsum("ij,j...->i...", np.asarray(C), tr4)
    assert np.max(np.abs(got - rhs_vec[:, None, None])) < 1e-10 * np.max(np.abs(rhs_vec))


def test_solve_homogeneous_gate_trips():
    n, shape = 1, (4, 6)
    bad = np.array([np.conj(RAY.coker_vec[0]), np.conj(RAY.coker_vec[1])])
    rhs = np.broadcast_to(bad[:, None, None], (2, *shape)).copy()
    with pytest.raises(SolvabilityError):
        solve_homogeneous(n, rhs, RAY, rtol=1e-8, what="control")


# -- level data -------------------------------------------------------------


def test_cascade_rhs_level_one_empty():
    slow = tiny_slow()
    tables = FluxTables(RAY.r)
    rhs = cascade_rhs(1, {}, tables, slow, RAY)
    assert not rhs.H and not rhs.K and not rhs.h and not rhs.kb
    assert rhs.leak == 0.0


def test_cascade_rhs_level_two_structure():
    slow = tiny_slow(n_max=4)
    tables = FluxTables(RAY.r)
    t = slow.tvals[:, None]
    alpha = {1: (0.2 * t * t) * np.exp(1j * slow.x)[None, :]}
    from svkwave.cascade import _probe_profile

    prof = _probe_profile(slow, RAY, alpha)
    rhs = cascade_rhs(2, {2: prof}, tables, slow, RAY)
    modes = set(rhs.H) | set(rhs.K)
    # transport of the profile keeps mode 1, its quadratic self products
    # rectify to 0 and double to 2, conjugates mirror both
    assert {1, 2} <= modes <= {0, 1, 2, -1, -2}
    for store in (rhs.H, rhs.K):
        for n, ep in store.items():
            for lam, _ in ep.terms:
                assert lam.real < -1e-12  # every product keeps fast decay
            if -n in store:
                assert (store[-n] + ep.conj().scale(-1.0)).max_abs() < 1e-12 * max(
                    ep.max_abs(), 1e-30
                )


def test_modify_rhs_merges_moment_channels():
    A = ExpPoly.expterm(-1.0 + 0j, [1.0 + 0j])
    B = ExpPoly.expterm(-2.0 + 0j, [0.5 + 0j])
    C = ExpPoly.expterm(-1.5 + 0j, [2.0 + 0j])
    rhs = CascadeRHS(
        level=3,
        H={1: A},
        K={},
        mom=[({1: B}, {}), ({}, {2: C})],
        h={},
        kb={},
        leak=0.25,
    )
    Hp, Kp, leak = modify_rhs(rhs)
    assert leak == 0.25
    assert (Hp[1] + A.scale(-1.0) + B.scale(-1.0)).max_abs() < 1e-15
    assert (Kp[2] + C.scale(-1.0)).max_abs() < 1e-15


# -- pairing model ----------------------------------------------------------


@pytest.fixture(scope="module")
def pairing_model():
    tables = FluxTables(RAY.r)
    rho = extract_transport(RAY, tables, n_max=2)
    W = extract_table(RAY, tables, rho, n_max=2)
    return tables, rho, W


def test_extract_transport_structure(pairing_model):
    # the extraction itself asserts rho_x = c rho to ten digits; here we
    # check the weights exist per mode and scale linearly with n
    _, rho, _ = pairing_model
    assert set(rho) == {1, 2}
    assert abs(rho[1]) > 1e-10 and abs(rho[2]) > 1e-10


def test_interaction_table_conjugate_symmetry(pairing_model):
    _, _, W = pairing_model
    M = W.shape[0]
    n_max = (M - 1) // 2
    for n in range(1, n_max + 1):
        for npr in range(-n_max, n_max + 1):
            a = W[n_max + n, n_max + npr]
            b = W[n_max - n, n_max - npr]
            assert abs(b - np.conj(a)) < 1e-12 * max(abs(a), 1e-30)


def test_solvability_closure_oracle(pairing_model):
    tables, rho, W = pairing_model
    resid, control = solvability_oracle(RAY, tables, rho, W)
    assert resid < 1e-8
    assert control > 1e-2  # alpha dropped: the pairing is order one


# -- slow mean --------------------------------------------------------------


def test_solve_mean_field_zero():
    slow = tiny_slow(N_x=16, N_t=8)
    d0 = np.zeros((2, slow.N_t + 1, slow.sgrid.N_x))
    mf, bres = solve_mean_field(d0, None, slow, RAY, y_max=6.0, n_y=32)
    assert np.max(np.abs(mf.U)) == 0.0
    assert bres < 1e-14


def test_solve_mean_field_manufactured_convergence():
    # prescribe a causal smooth field vanishing at the strip top, feed its
    # own traction trace and interior defect back, recover at second order
    import sympy as sp

    lam = RAY.r - 2.0
    y_max, L, T_run = 5.0, 8.0, 2.0
    t_, x_, y_ = sp.symbols("t x y", real=True)
    k = 2 * sp.pi / L
    ramp = t_**4 / (1 + t_**4)
    chi = ((y_max - y_) / y_max) ** 4
    u_ = ramp * sp.sin(k * x_) * sp.exp(-y_) * chi
    v_ = ramp * sp.cos(k * x_) * sp.exp(-y_ * sp.Rational(3, 2)) * chi
    ux, uy = sp.diff(u_, x_), sp.diff(u_, y_)
    vx, vy = sp.diff(v_, x_), sp.diff(v_, y_)
    T01 = uy + vx
    T11 = lam * (ux + vy) + 2 * vy
    T00 = lam * (ux + vy) + 2 * ux
    T10 = vx + uy
    s_u = sp.diff(u_, t_, 2) - (sp.diff(T00, x_) + sp.diff(T01, y_))
    s_v = sp.diff(v_, t_, 2) - (sp.diff(T10, x_) + sp.diff(T11, y_))
    f = {
        name: sp.lambdify((t_, x_, y_), expr, "numpy")
        for name, expr in (
            ("u", u_), ("v", v_), ("su", s_u), ("sv", s_v),
            ("g0", T01.subs(y_, 0)), ("g1", T11.subs(y_, 0)),
        )
    }

    errs = []
    for (N_x, N_t, n_y) in ((24, 32, 40), (48, 64, 80)):
        slow = SlowGrid(SpectralGrid(L_x=L, N_x=N_x, n_max=1), T=T_run, N_t=N_t)
        y = np.linspace(0.0, y_max, n_y + 1)
        tt = slow.tvals[:, None, None]
        xx = slow.x[None, :, None]
        yy = y[None, None, :]
        U = np.stack([f["u"](tt, xx, yy), f["v"](tt, xx, yy)])
        src = np.stack([f["su"](tt, xx, yy), f["sv"](tt, xx, yy)])
        data = np.stack(
            [f["g0"](tt[..., 0], xx[..., 0], 0.0), f["g1"](tt[..., 0], xx[..., 0], 0.0)]
        )
        mf, _ = solve_mean_field(
            data, src, slow, RAY, y_max=y_max, n_y=n_y, sponge_width=0.0
        )
        errs.append(float(np.max(np.abs(mf.U - U))))
    assert errs[0] / errs[1] > 2.5  # second order in the mesh
    assert errs[1] < 1e-2


# -- the built set ----------------------------------------------------------


def test_gate_reports(built):
    assert [g.order for g in built.gates] == [2, 3, 4]
    for g in built.gates:
        assert g.leak == 0.0
        assert g.defect_rel < 3e-3
        assert g.mean_imag_rel < 1e-12
        assert g.mean_boundary_residual < 1e-8


def test_order_residuals_below_gate(built):
    for k in (2, 3, 4):
        out = order_residuals(built, k)
        assert out["interior"] < 1e-10
        assert out["boundary"] < 1e-8


def test_u2_is_pure_alpha(built):
    p = built.profiles[2]
    assert p.alpha and p.mean is None
    assert not p.osc_p and not p.osc_h
    u0, v0 = p.zero_star
    assert u0.is_zero() and v0.is_zero()


def test_rectification_turns_on_at_three(built):
    assert built.profiles[3].mean is not None
    assert np.max(np.abs(built.profiles[3].mean.U)) > 1e-8
    assert built.profiles[4].mean is not None


def test_profiles_conjugate_and_causal(built):
    for k, prof in built.profiles.items():
        for n in prof.osc_modes():
            if n <= 0:
                continue
            u, v = prof.osc_mode(n)
            mu, mv = prof.osc_mode(-n)
            du = (mu + u.conj().scale(-1.0)).max_abs()
            dv = (mv + v.conj().scale(-1.0)).max_abs()
            assert du < 1e-12 * max(u.max_abs(), 1e-30)
            assert dv < 1e-12 * max(v.max_abs(), 1e-30)
        for n, arr in (prof.alpha or {}).items():
            assert np.max(np.abs(arr[0])) < 1e-14  # flat ramp start
        if prof.mean is not None:
            assert np.max(np.abs(prof.mean.U[:, 0])) < 1e-14
            assert np.max(np.abs(np.imag(prof.mean.U))) == 0.0


def test_check_solvability_report(built):
    rep = check_solvability(built)
    assert rep["leak"] < 1e-12
    assert rep["oracle_residual"] < 1e-8
    assert rep["mean_boundary_residual"] < 1e-8
    assert rep["pairing_separation"] < 0.1
    g2 = rep["gates"][0]
    assert g2.pairing_built < 1e-3 * g2.pairing_forcing


def test_assemble_leading_order_slope(built):
    y_eval = np.array([0.0, 0.4, 1.0])
    t = 3.0
    pairs = []
    for eps in (0.05, 0.025, 0.0125):
        n_x = int(np.ceil(14.0 * 12.0 * 2 / (2 * np.pi * eps) / 2) * 2)
        x_eval = np.linspace(0.0, 12.0, n_x, endpoint=False)
        U = built.approx(eps, x_eval, y_eval, t)
        pairs.append((eps, float(np.max(np.abs(U)))))
    slope, r2 = slope_fit(pairs)
    assert abs(slope - 2.0) < 0.05
    assert r2 > 0.999


def test_assemble_guards(built):
    with pytest.raises(ValueError):
        built.approx(0.1, np.linspace(0, 12.0, 16, endpoint=False), [0.0], 3.0)
    with pytest.raises(ValueError):
        built.approx(
            0.1, np.linspace(0, 12.0, 2048, endpoint=False), [0.0], 3.0001
        )


def test_save_load_roundtrip(built, tmp_path):
    p = tmp_path / "set.svkc"
    built.save(p)
    meta, arrays = CascadeSet.load_summary(p)
    assert meta["kind"] == "cascade-set"
    assert meta["r"] == RAY.r and meta["N"] == 4
    assert meta["orders"] == [2, 3, 4]
    a21 = arrays["alpha_2_1"]
    assert np.array_equal(a21, built.profiles[2].alpha[1])
    assert "mean_3" in arrays and "table" in arrays
    gates = meta["gates"]
    assert len(gates) == 3 and gates[0]["order"] == 2
