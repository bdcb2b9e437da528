"""Solution-family verification, finite transforms, grids, and RK4."""

import math
import random
from fractions import Fraction

import numpy as np
import pytest

from psym import expr as ex
from psym.context import JetContext
from psym.engine import DynSys, build_system, exp_series_terms
from psym.jet import VectorField
from psym.verify import (Ansatz, GridSample, VerifyError, family_substitution,
                         finite_transform, flow_states, integrate_ds,
                         residual_on_grid, sample_ansatz, variational_check,
                         verify_ansatz, verify_orbit_ode)


def S(ctx, name):
    return ex.Sym(ctx.lookup(name))


@pytest.fixture
def heat_setup():
    ctx = JetContext(["x", "t"], ["u"], constants=["c0"])
    heat = ex.add(S(ctx, "u_t"), ex.mul(ex.MINUS_ONE, S(ctx, "u_xx")),
                  ex.mul(ex.MINUS_ONE, S(ctx, "u"), S(ctx, "u_xx")),
                  ex.pow_(S(ctx, "u_x"), 2))
    system = build_system(ctx, [("heat", heat, ctx.lookup("u_t"))])
    lam, c0 = ex.Sym(ctx.lam), S(ctx, "c0")
    U = ex.mul(c0, ex.fun("exp", ex.add(ex.mul(ex.MINUS_ONE, S(ctx, "x"), lam),
                                        ex.mul(S(ctx, "t"), ex.pow_(lam, 2)))))
    fam = Ansatz("orbit", {ctx.lookup("u"): U}, constants=("c0",), has_lambda=True)
    X = VectorField(ctx, xi={ctx.lookup("x"): ex.mul(ex.integer(2), S(ctx, "t"))},
                    phi={ctx.lookup("u"): ex.mul(ex.MINUS_ONE, S(ctx, "x"),
                                                 S(ctx, "u"))})
    return ctx, system, fam, X


@pytest.fixture
def kdv_setup():
    ctx = JetContext(["x", "t"], ["u"], constants=["c1", "c2"])
    kdv = ex.add(S(ctx, "u_t"), S(ctx, "u_xxx"), ex.mul(S(ctx, "u"), S(ctx, "u_x")))
    system = build_system(ctx, [("kdv", kdv, ctx.lookup("u_t"))])
    c1, c2 = S(ctx, "c1"), S(ctx, "c2")
    U = ex.mul(ex.add(c2, S(ctx, "x")), ex.pow_(ex.add(c1, S(ctx, "t")), -1))
    fam = Ansatz("rational", {ctx.lookup("u"): U}, constants=("c1", "c2"))
    return ctx, system, fam


# -- verify_ansatz ------------------------------------------------------------


def test_rational_family_solves_kdv(kdv_setup):
    ctx, system, fam = kdv_setup
    v = verify_ansatz(fam, system)
    assert v.passed and v.symbolic


def test_quadratic_family_solves_full_laplace_system():
    ctx = JetContext(["y", "x"], ["u"], constants=["A", "B", "C", "D", "E"],
                     functions={"g": 1})
    g = ex.ufun("g", S(ctx, "u"))
    delta = ex.add(S(ctx, "u_xx"), S(ctx, "u_yy"), ex.mul(g, S(ctx, "u_xxx")))
    system = build_system(ctx, [("mlap", delta, None)])
    # chain conditions: all third derivatives vanish
    for name in ("u_xxy", "u_xxx", "u_yyy", "u_xyy"):
        system.add_equation(S(ctx, name), name=name)
    A, B, C, D, E = (S(ctx, n) for n in "ABCDE")
    x, y = S(ctx, "x"), S(ctx, "y")
    U = ex.add(ex.mul(A, ex.add(ex.pow_(x, 2),
                                ex.mul(ex.MINUS_ONE, ex.pow_(y, 2)))),
               ex.mul(B, x, y), ex.mul(C, x), ex.mul(D, y), E)
    fam = Ansatz("quad", {ctx.lookup("u"): U})
    v = verify_ansatz(fam, system)
    assert v.passed and v.symbolic


def test_superposition_family(heat_setup):
    ctx = JetContext(["x", "y"], ["u"])
    d33 = ex.add(S(ctx, "u_x"), S(ctx, "u"), ex.MINUS_ONE,
                 ex.mul(ex.pow_(S(ctx, "u_x"), 2),
                        ex.add(S(ctx, "u_x"), ex.mul(ex.MINUS_ONE, S(ctx, "u_y")))))
    system = build_system(ctx, [("sup", d33, None)])
    lam = ex.Sym(ctx.lam)
    U = ex.add(ex.ONE, ex.mul(lam, ex.fun("exp", ex.add(
        ex.mul(ex.MINUS_ONE, S(ctx, "x")), ex.mul(ex.MINUS_ONE, S(ctx, "y"))))))
    fam = Ansatz("shift", {ctx.lookup("u"): U}, has_lambda=True)
    assert verify_ansatz(fam, system).symbolic


def test_backlund_families_and_their_sum():
    ctx = JetContext(["x", "t"], ["u"], parameters=["a"], constants=["cp", "cm"])
    a = S(ctx, "a")
    pde = ex.add(S(ctx, "u_t"), ex.mul(ex.MINUS_ONE, S(ctx, "u_xx")),
                 ex.mul(ex.MINUS_ONE, ex.pow_(S(ctx, "u_x"), 2)),
                 ex.mul(ex.rational(1, 2), a, ex.pow_(S(ctx, "u"), 2)))
    system = build_system(ctx, [("rd", pde, ctx.lookup("u_t"))])
    root = ex.pow_(ex.mul(ex.rational(1, 2), a), Fraction(1, 2))
    base = ex.fun("exp", ex.mul(ex.rational(1, 2), a, S(ctx, "t")))
    up = ex.mul(S(ctx, "cp"), base, ex.fun("exp", ex.mul(root, S(ctx, "x"))))
    um = ex.mul(S(ctx, "cm"), base,
                ex.fun("exp", ex.mul(ex.MINUS_ONE, root, S(ctx, "x"))))
    for u in (up, um):
        fam = Ansatz("f", {ctx.lookup("u"): u})
        assert verify_ansatz(fam, system).symbolic
    both = Ansatz("sum", {ctx.lookup("u"): ex.add(up, um)},
                  domain={ctx.lookup("a"): (0.5, 2.0)})
    v = verify_ansatz(both, system, rng=random.Random(5))
    assert not v.passed
    assert any(s.verdict == ex.ZeroStatus.NONZERO and s.witness
               for s in v.statuses)


def test_boussinesq_family():
    ctx = JetContext(["x", "t"], ["u"], constants=["B", "C", "D"])
    bsq = ex.add(S(ctx, "u_tt"), ex.mul(S(ctx, "u"), S(ctx, "u_xx")),
                 ex.pow_(S(ctx, "u_x"), 2), S(ctx, "u_xxxx"))
    system = build_system(ctx, [("bsq", bsq, None)])
    system.add_equation(ex.add(S(ctx, "u_xt"), ex.mul(S(ctx, "t"), S(ctx, "u_xx"))),
                        name="cond")
    B, C, D = (S(ctx, n) for n in "BCD")
    U = ex.add(ex.mul(B, S(ctx, "x")),
               ex.mul(ex.rational(-1, 2), ex.pow_(B, 2), ex.pow_(S(ctx, "t"), 2)),
               ex.mul(C, S(ctx, "t")), D)
    fam = Ansatz("drifting", {ctx.lookup("u"): U})
    assert verify_ansatz(fam, system).symbolic


# -- orbit verification --------------------------------------------------------


def test_heat_orbit_verifies(heat_setup):
    ctx, system, fam, X = heat_setup
    assert verify_ansatz(fam, system).symbolic
    assert verify_orbit_ode(fam, X).symbolic


def test_orbit_needs_lambda(heat_setup):
    ctx, system, fam, X = heat_setup
    static = Ansatz("static", {ctx.lookup("u"): S(ctx, "c0")}, constants=("c0",))
    with pytest.raises(VerifyError):
        verify_orbit_ode(static, X)


def test_constant_family_orbit_under_translation():
    ctx = JetContext(["x", "t"], ["u"], constants=["c0"])
    X = VectorField(ctx, xi={ctx.lookup("x"): ex.ONE})
    lam = ex.Sym(ctx.lam)
    fam = Ansatz("const", {ctx.lookup("u"): ex.add(S(ctx, "c0"),
                                                   ex.mul(ex.ZERO, lam))},
                 constants=("c0",), has_lambda=True)
    assert verify_orbit_ode(fam, X).symbolic


def test_dilation_orbit_of_rational_family(kdv_setup):
    # c2 = exp(lambda) c, c1 = exp(lambda) c' parametrizes the dilation orbit
    ctx, system, _ = kdv_setup
    lam = ex.Sym(ctx.lam)
    el = ex.fun("exp", lam)
    U = ex.mul(ex.add(ex.mul(S(ctx, "c2"), el), S(ctx, "x")),
               ex.pow_(ex.add(ex.mul(S(ctx, "c1"), el), S(ctx, "t")), -1))
    fam = Ansatz("dil", {ctx.lookup("u"): U}, constants=("c1", "c2"),
                 has_lambda=True)
    X = VectorField(ctx, xi={ctx.lookup("x"): S(ctx, "x"),
                             ctx.lookup("t"): S(ctx, "t")})
    assert verify_orbit_ode(fam, X).symbolic


def test_noninvariance_witness(heat_setup):
    # the characteristic x U + 2t dU/dx is NOT zero on the family, while the
    # orbit equation holds: partial, not conditional
    ctx, system, fam, X = heat_setup
    U = fam.exprs[ctx.lookup("u")]
    char = ex.add(ex.mul(S(ctx, "x"), U),
                  ex.mul(ex.integer(2), S(ctx, "t"),
                         ex.diff(U, ctx.lookup("x"))))
    st = ex.is_zero(char, rng=random.Random(3))
    assert st.verdict == ex.ZeroStatus.NONZERO


# -- finite transforms ---------------------------------------------------------


def test_finite_transform_identity(heat_setup):
    ctx, system, fam, X = heat_setup
    ax, ay = np.linspace(0, 1, 16), np.linspace(0.5, 1.5, 16)
    s0 = sample_ansatz(fam, ctx, (ax, ay),
                       bindings={ctx.lookup("c0"): 1, ctx.lam: 0.3})
    s1 = finite_transform(X, s0, 0.0, substeps=4)
    m = np.isfinite(s1.values)
    assert np.max(np.abs(s1.values[m] - s0.values[m])) < 1e-12


def test_finite_transform_heat_orbit_closure(heat_setup):
    ctx, system, fam, X = heat_setup
    ax, ay = np.linspace(0.0, 1.0, 64), np.linspace(0.1, 1.0, 64)
    lam0, dlam = 0.3, 0.25
    s0 = sample_ansatz(fam, ctx, (ax, ay),
                       bindings={ctx.lookup("c0"): 1, ctx.lam: lam0})
    pushed = finite_transform(X, s0, dlam)
    target = sample_ansatz(fam, ctx, (ax, ay),
                           bindings={ctx.lookup("c0"): 1, ctx.lam: lam0 + dlam})
    mask = np.isfinite(pushed.values)
    assert mask.mean() > 0.3
    assert np.max(np.abs(pushed.values[mask] - target.values[mask])) <= 1e-4


def test_finite_transform_rotation_rotates_quadratic_family():
    # u = x^2 - y^2 maps to the member cos(2L)(x^2-y^2) + sin(2L)*2xy... i.e.
    # A = cos 2L, B = sin 2L in A(x^2-y^2) + Bxy after the pushforward by -L
    ctx = JetContext(["x", "y"], ["u"])
    X = VectorField(ctx, xi={ctx.lookup("x"): S(ctx, "y"),
                             ctx.lookup("y"): ex.mul(ex.MINUS_ONE, S(ctx, "x"))})
    ax = np.linspace(-1, 1, 64)
    grid = np.meshgrid(ax, ax, indexing="ij")
    vals = grid[0] ** 2 - grid[1] ** 2
    s0 = GridSample((ax, ax), vals)
    L = 0.2
    pushed = finite_transform(X, s0, L, ctx=ctx)
    # oracle: the pushed graph is u composed with the inverse rotation, again
    # a member of the quadratic family A(x^2-y^2) + Bxy
    cx = grid[0] * math.cos(L) - grid[1] * math.sin(L)
    cy = grid[0] * math.sin(L) + grid[1] * math.cos(L)
    want = cx ** 2 - cy ** 2
    mask = np.isfinite(pushed.values)
    assert mask.mean() > 0.5
    assert np.max(np.abs(pushed.values[mask] - want[mask])) < 1e-4


def test_finite_transform_respects_group_bound(heat_setup):
    ctx, system, fam, X = heat_setup
    s0 = sample_ansatz(fam, ctx, (np.linspace(0, 1, 8), np.linspace(0.5, 1, 8)),
                       bindings={ctx.lookup("c0"): 1, ctx.lam: 0.1})
    with pytest.raises(VerifyError):
        finite_transform(X, s0, 1.5)


# -- finite-difference residuals -----------------------------------------------


def test_fd_residual_of_exact_sample(kdv_setup):
    ctx, system, fam = kdv_setup
    g = sample_ansatz(fam, ctx, (np.linspace(0, 1, 64), np.linspace(1, 2, 64)),
                      bindings={ctx.lookup("c1"): 0, ctx.lookup("c2"): 0})
    assert residual_on_grid(g, system) <= 1e-5


def test_fd_residual_zero_function(kdv_setup):
    ctx, system, _ = kdv_setup
    ax = np.linspace(0, 1, 32)
    g = GridSample((ax, ax + 1.0), np.zeros((32, 32)))
    assert residual_on_grid(g, system) == 0.0


def test_fd_residual_detects_perturbation(kdv_setup):
    ctx, system, fam = kdv_setup
    ax, ay = np.linspace(0, 1, 64), np.linspace(1, 2, 64)
    g = sample_ansatz(fam, ctx, (ax, ay),
                      bindings={ctx.lookup("c1"): 0, ctx.lookup("c2"): 0})
    bad = GridSample(g.axes, g.values + 1e-2 * np.sin(
        5 * np.outer(ax, np.ones_like(ay))))
    assert residual_on_grid(bad, system) > 1e-3


def test_fd_residual_rejects_coarse_grid(kdv_setup):
    ctx, system, _ = kdv_setup
    g = GridSample((np.linspace(0, 1, 5), np.linspace(1, 2, 5)), np.zeros((5, 5)))
    with pytest.raises(VerifyError):
        residual_on_grid(g, system)


def test_symbolic_numeric_coherence(heat_setup):
    # symbolic pass implies small FD residual on a sampled member
    ctx, system, fam, X = heat_setup
    assert verify_ansatz(fam, system).symbolic
    g = sample_ansatz(fam, ctx, (np.linspace(0, 1, 64), np.linspace(0.5, 1.5, 64)),
                      bindings={ctx.lookup("c0"): 1, ctx.lam: 0.4})
    assert residual_on_grid(g, system) <= 1e-5


# -- dynamical systems ----------------------------------------------------------


def limit_cycle_system():
    ctx = JetContext(["t"], ["x", "y"])
    X, Y = (ex.Sym(s) for s in ctx.dependents)
    r2 = ex.add(ex.pow_(X, 2), ex.pow_(Y, 2))
    one_m = ex.add(ex.ONE, ex.mul(ex.MINUS_ONE, r2))
    return ctx, DynSys(ctx, {ctx.dependents[0]: ex.add(ex.mul(X, one_m),
                                                       ex.mul(ex.MINUS_ONE, Y)),
                             ctx.dependents[1]: ex.add(ex.mul(Y, one_m), X)})


def test_rk4_limit_cycle_convergence():
    ctx, F = limit_cycle_system()
    tr = integrate_ds(F, (0.5, 0.0), (0.0, 20.0), 1e-3)
    r = math.hypot(*tr.states[-1])
    assert abs(r - 1.0) <= 1e-3


def test_rk4_constant_field():
    ctx = JetContext(["t"], ["x", "y"])
    F = DynSys(ctx, {d: ex.ZERO for d in ctx.dependents})
    tr = integrate_ds(F, (0.3, -0.7), (0.0, 5.0), 1e-2)
    assert np.max(np.abs(tr.states - tr.states[0])) == 0.0


def test_rk4_fourth_order_convergence_randomized():
    # halving h cuts the error against closed forms by about 16x
    rng = random.Random(71)
    ratios = []
    for _ in range(100):
        a = rng.uniform(-1.5, 1.5)
        b = rng.uniform(-1.0, 1.0)
        ctx = JetContext(["t"], ["x"])
        X = ex.Sym(ctx.dependents[0])
        # x' = a x + b x^2 has closed form via the Bernoulli substitution
        F = DynSys(ctx, {ctx.dependents[0]:
                         ex.add(ex.mul(ex.Rat(Fraction(a).limit_denominator(10**6)), X),
                                ex.mul(ex.Rat(Fraction(b).limit_denominator(10**6)), X,
                                       X))})
        a = float(ex.Rat(Fraction(a).limit_denominator(10**6)).value)
        b = float(ex.Rat(Fraction(b).limit_denominator(10**6)).value)
        x0, T = 0.4, 1.0
        if abs(a) < 1e-3:
            continue
        denom_T = math.exp(-a * T) * (1 / x0 + b / a) - b / a
        if abs(denom_T) < 0.2:
            continue
        exact = 1.0 / denom_T
        errs = []
        for h in (0.02, 0.01):
            tr = integrate_ds(F, (x0,), (0.0, T), h)
            errs.append(abs(tr.states[-1][0] - exact))
        if errs[1] < 1e-14:
            continue
        ratios.append(errs[0] / errs[1])
    assert len(ratios) >= 80
    assert 10.0 <= float(np.median(ratios)) <= 22.0


def heteroclinic_system():
    ctx = JetContext(["t"], ["x", "y", "z"])
    X, Y, Z = (ex.Sym(s) for s in ctx.dependents)
    v = ex.mul(Z, ex.fun("exp", ex.mul(ex.MINUS_ONE, Y)))
    one_m = ex.add(ex.ONE, ex.mul(ex.MINUS_ONE, v))
    R2 = ex.add(ex.mul(ex.rational(1, 6), ex.add(ex.pow_(X, 2), ex.pow_(Y, 2)),
                       ex.fun("exp", Y)),
                ex.mul(ex.rational(1, 2), ex.pow_(Z, 2),
                       ex.fun("exp", ex.mul(ex.MINUS_ONE, Y))))
    pert = ex.pow_(ex.add(R2, ex.mul(ex.MINUS_ONE, Z)), 2)
    F = DynSys(ctx, {
        ctx.dependents[0]: ex.add(ex.mul(X, one_m), pert),
        ctx.dependents[1]: ex.mul(Y, one_m),
        ctx.dependents[2]: ex.add(ex.mul(ex.MINUS_ONE, Z),
                                  ex.mul(Y, Z, one_m),
                                  ex.mul(ex.MINUS_ONE, ex.pow_(Z, 2),
                                         ex.fun("exp", ex.mul(ex.MINUS_ONE, Y))),
                                  ex.mul(ex.integer(3), R2))})
    phis = {ctx.dependents[0]: Y, ctx.dependents[1]: ex.mul(ex.MINUS_ONE, X),
            ctx.dependents[2]: ex.mul(ex.MINUS_ONE, X, Z)}
    return ctx, F, phis


def family67(t, t0=5.0, lam=0.0):
    s = 1.0 / math.cosh(t - t0)
    x = math.sqrt(3) * s * math.cos(lam)
    y = math.sqrt(3) * s * math.sin(lam)
    z = (1.0 + math.tanh(t - t0)) * math.exp(y)
    return (x, y, z)


def test_heteroclinic_family_tracks_closed_form():
    ctx, F, phis = heteroclinic_system()
    u0 = family67(0.0)
    tr = integrate_ds(F, u0, (0.0, 10.0), 1e-3)
    err = max(float(np.max(np.abs(np.array(family67(t)) - tr.states[k])))
              for k, t in enumerate(tr.times))
    assert err <= 1e-6


def test_variational_check_both_tangents_pass():
    ctx, F, phis = heteroclinic_system()
    u0 = family67(0.0)
    assert variational_check(F, phis, u0, (0.0, 10.0), h=1e-3, tol=1e-6,
                             tangent="field").passed
    assert variational_check(F, phis, u0, (0.0, 10.0), h=1e-3, tol=1e-6,
                             tangent="flow").passed


def test_variational_flow_tangent_always_passes():
    ctx, F = limit_cycle_system()
    v = variational_check(F, dict(F.rhs), (0.4, 0.1), (0.0, 8.0), h=1e-3,
                          tol=1e-6, tangent="flow")
    assert v.passed


def test_variational_rejects_non_symmetry():
    # phi that fails the commutation condition drifts away from the
    # variational solution
    ctx, F = limit_cycle_system()
    X, Y = (ex.Sym(s) for s in ctx.dependents)
    bad = {ctx.dependents[0]: ex.pow_(X, 2), ctx.dependents[1]: Y}
    v = variational_check(F, bad, (0.4, 0.1), (0.0, 8.0), h=1e-3, tol=1e-6,
                          tangent="field")
    assert not v.passed


def test_finite_map_shifts_family_member():
    ctx, F, phis = heteroclinic_system()
    Xrot = VectorField(ctx, phi=phis)
    ts = np.linspace(0.0, 10.0, 21)
    pts = np.array([family67(t, lam=0.0) for t in ts])
    moved = flow_states(Xrot, pts, 0.4)
    target = np.array([family67(t, lam=-0.4) for t in ts])
    assert np.max(np.abs(moved - target)) <= 1e-5


# -- series tails on families ---------------------------------------------------


def test_series_tail_vanishes_on_heat_family(heat_setup):
    ctx, system, fam, X = heat_setup
    rng = random.Random(81)
    for row in exp_series_terms(X, system, 3):
        for term in row:
            rules = family_substitution(fam, ctx, [term])
            residual = ex.substitute(term, rules)
            st = ex.is_zero(residual, tol=1e-8, rng=rng)
            assert st.is_zero(), ex.to_str(residual)


def test_heteroclinic_family_is_an_orbit_of_the_twist_field():
    # treating t as the only independent variable and lambda as the group
    # parameter, the (lambda-negated) heteroclinic family satisfies
    # dU/dlambda = phi(U) exactly
    ctx = JetContext(["t"], ["x", "y", "z"], constants=["t0"])
    lam = ex.Sym(ctx.lam)
    t, t0 = S(ctx, "t"), S(ctx, "t0")
    arg = ex.add(t, ex.mul(ex.MINUS_ONE, t0))
    sech, tanh = ex.fun("sech", arg), ex.fun("tanh", arg)
    r3 = ex.pow_(ex.integer(3), Fraction(1, 2))
    Ux = ex.mul(r3, sech, ex.fun("cos", lam))
    Uy = ex.mul(ex.MINUS_ONE, r3, sech, ex.fun("sin", lam))
    Uz = ex.mul(ex.add(ex.ONE, tanh), ex.fun("exp", Uy))
    fam = Ansatz("het", {ctx.lookup("x"): Ux, ctx.lookup("y"): Uy,
                         ctx.lookup("z"): Uz},
                 constants=("t0",), has_lambda=True)
    X, Y, Z = (ex.Sym(s) for s in ctx.dependents)
    twist = VectorField(ctx, phi={ctx.dependents[0]: Y,
                                  ctx.dependents[1]: ex.mul(ex.MINUS_ONE, X),
                                  ctx.dependents[2]: ex.mul(ex.MINUS_ONE, X, Z)})
    assert verify_orbit_ode(fam, twist).symbolic
