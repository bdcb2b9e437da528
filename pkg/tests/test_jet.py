"""Total derivatives, prolongation, evolutionary form, discrete pullbacks."""

import random
from fractions import Fraction

import pytest

from psym import expr as ex
from psym.context import JetContext
from psym.jet import (DiscreteMap, FieldError, UnsupportedMapError, VectorField,
                      apply_prolonged, evolutionary_form, prolong_coefficient,
                      prolong_discrete, total_derivative)
from conftest import gen_expr


@pytest.fixture
def ctx():
    return JetContext(["x", "y"], ["u"], functions={"g": 1})


def S(ctx, name):
    return ex.Sym(ctx.lookup(name))


def rotation(ctx):
    return VectorField(ctx, xi={ctx.lookup("x"): S(ctx, "y"),
                                ctx.lookup("y"): ex.mul(ex.MINUS_ONE, S(ctx, "x"))})


# -- total derivatives -------------------------------------------------------


def test_total_derivative_basics(ctx):
    u = ctx.lookup("u")
    assert total_derivative(ex.Sym(u), 0, ctx) == S(ctx, "u_x")
    got = total_derivative(ex.ufun("g", ex.Sym(u)), 0, ctx)
    assert got == ex.mul(ex.uder("g", (1,), (ex.Sym(u),)), S(ctx, "u_x"))


def test_total_derivative_against_sampled_realization(ctx):
    # D_x(u_xx + u_yy + g(u) u_xxx) via the operator vs. direct symbol-wise
    # differentiation of a polynomial realization u(x, y)
    x, y = (ex.Sym(s) for s in ctx.independents)
    u = ctx.lookup("u")
    e = ex.add(S(ctx, "u_xx"), S(ctx, "u_yy"),
               ex.mul(ex.ufun("g", ex.Sym(u)), S(ctx, "u_xxx")))
    de = total_derivative(e, 0, ctx)
    # realization: u = x^3 y + y^2, g(v) = v^2
    U = ex.add(ex.mul(ex.pow_(x, 3), y), ex.pow_(y, 2))
    def jet_rules(expr):
        rules = {}
        for s in ex.jet_symbols(expr):
            val = U
            for i, c in enumerate(s.index):
                for _ in range(c):
                    val = ex.diff(val, ctx.independents[i])
            rules[s] = val
        return rules

    def realize(expr):
        expr = ex.substitute(expr, jet_rules(expr))
        # g := square
        def gsq(e):
            if isinstance(e, ex.UFun):
                return ex.pow_(gsq(e.args[0]), 2)
            if isinstance(e, ex.UDer):
                return ex.mul(ex.integer(2), gsq(e.args[0]))
            if isinstance(e, (ex.Rat, ex.Sym)):
                return e
            if isinstance(e, ex.Add):
                return ex.add(*[gsq(t) for t in e.terms])
            if isinstance(e, ex.Mul):
                return ex.mul(*[gsq(f) for f in e.factors])
            if isinstance(e, ex.Pow):
                return ex.pow_(gsq(e.base), e.exp)
            raise AssertionError
        return gsq(expr)

    lhs = realize(de)
    rhs = ex.diff(realize(e), ctx.independents[0])
    assert lhs == rhs


def test_total_derivatives_commute_randomized(ctx):
    rng = random.Random(21)
    for _ in range(120):
        e, _, _ = gen_expr(rng, ctx, depth=2, max_jet_order=3)
        dxy = total_derivative(total_derivative(e, 0, ctx), 1, ctx)
        dyx = total_derivative(total_derivative(e, 1, ctx), 0, ctx)
        assert dxy == dyx


# -- prolongation ------------------------------------------------------------


def test_rotation_prolongation_matches_hand_results(ctx):
    X = rotation(ctx)
    assert apply_prolonged(X, S(ctx, "u_yyy")) == \
        ex.mul(ex.integer(-3), S(ctx, "u_xyy"))
    assert apply_prolonged(X, S(ctx, "u_xxy")) == \
        ex.add(ex.mul(ex.integer(2), S(ctx, "u_xyy")),
               ex.mul(ex.MINUS_ONE, S(ctx, "u_xxx")))
    assert apply_prolonged(X, S(ctx, "u_xyy")) == \
        ex.add(ex.mul(ex.integer(-2), S(ctx, "u_xxy")), S(ctx, "u_yyy"))


def test_prolonged_coefficients_of_translation_vanish(ctx):
    X = VectorField(ctx, xi={ctx.lookup("x"): ex.ONE})
    dep = ctx.dependents[0]
    for index in [(1, 0), (0, 1), (2, 1), (3, 0)]:
        assert prolong_coefficient(X, dep, index) == ex.ZERO


def test_generalized_field_coefficient_is_total_derivative(ctx):
    ctx2 = JetContext(["x", "t"], ["u"], parameters=["a"])
    a = ex.Sym(ctx2.parameters[0])
    u, uxx = ex.Sym(ctx2.dependents[0]), ex.Sym(ctx2.jet("u", (2, 0)))
    X = VectorField(ctx2, phi={ctx2.dependents[0]:
                               ex.add(uxx, ex.mul(ex.MINUS_ONE, a, u))},
                    kind="generalized")
    got = prolong_coefficient(X, ctx2.dependents[0], (1, 0))
    want = ex.add(ex.Sym(ctx2.jet("u", (3, 0))),
                  ex.mul(ex.MINUS_ONE, a, ex.Sym(ctx2.jet("u", (1, 0)))))
    assert got == want


def test_prolongation_linear_in_the_field(ctx):
    rng = random.Random(31)
    x, y, u = S(ctx, "x"), S(ctx, "y"), S(ctx, "u")
    for _ in range(100):
        X = VectorField(ctx, xi={ctx.lookup("x"): ex.mul(y, u)},
                        phi={ctx.lookup("u"): ex.pow_(u, 2)})
        Y = VectorField(ctx, xi={ctx.lookup("y"): x},
                        phi={ctx.lookup("u"): ex.mul(x, u)})
        A = Fraction(rng.randint(-3, 3), rng.randint(1, 3))
        B = Fraction(rng.randint(-3, 3), rng.randint(1, 3))
        Z = X.scaled(A).plus(Y.scaled(B))
        e, _, _ = gen_expr(rng, ctx, depth=2, funs=False)
        lhs = apply_prolonged(Z, e)
        rhs = ex.add(ex.mul(ex.Rat(A), apply_prolonged(X, e)),
                     ex.mul(ex.Rat(B), apply_prolonged(Y, e)))
        assert lhs == rhs


def test_prolongation_leibniz(ctx):
    rng = random.Random(33)
    X = rotation(ctx)
    for _ in range(100):
        e1, _, _ = gen_expr(rng, ctx, depth=2, funs=False)
        e2, _, _ = gen_expr(rng, ctx, depth=2, funs=False)
        lhs = apply_prolonged(X, ex.mul(e1, e2))
        rhs = ex.add(ex.mul(apply_prolonged(X, e1), e2),
                     ex.mul(e1, apply_prolonged(X, e2)))
        assert lhs == rhs


def test_evolutionary_form_examples(ctx):
    X = VectorField(ctx, xi={ctx.lookup("x"): ex.ONE})
    Q = evolutionary_form(X)
    assert Q.phi[ctx.lookup("u")] == ex.mul(ex.MINUS_ONE, S(ctx, "u_x"))

    ctx2 = JetContext(["x", "t"], ["u"])
    x2, t2, u2 = (ex.Sym(ctx2.lookup(n)) for n in ("x", "t", "u"))
    heat_field = VectorField(ctx2, xi={ctx2.lookup("x"): ex.mul(ex.integer(2), t2)},
                             phi={ctx2.lookup("u"): ex.mul(ex.MINUS_ONE, x2, u2)})
    q = evolutionary_form(heat_field).phi[ctx2.lookup("u")]
    want = ex.add(ex.mul(ex.MINUS_ONE, x2, u2),
                  ex.mul(ex.integer(-2), t2, ex.Sym(ctx2.jet("u", (1, 0)))))
    assert q == want

    bsq_field = VectorField(ctx2, xi={ctx2.lookup("t"): ex.ONE,
                                      ctx2.lookup("x"): t2},
                            phi={ctx2.lookup("u"): ex.mul(ex.integer(-2), t2)})
    q2 = evolutionary_form(bsq_field).phi[ctx2.lookup("u")]
    want2 = ex.add(ex.mul(ex.integer(-2), t2),
                   ex.mul(ex.MINUS_ONE, t2, ex.Sym(ctx2.jet("u", (1, 0)))),
                   ex.mul(ex.MINUS_ONE, ex.Sym(ctx2.jet("u", (0, 1)))))
    assert q2 == want2


def test_evolutionary_identity_randomized(ctx):
    # X* e = Q* e + xi_i D_i e
    rng = random.Random(37)
    x, y, u = S(ctx, "x"), S(ctx, "y"), S(ctx, "u")
    fields = [
        rotation(ctx),
        VectorField(ctx, xi={ctx.lookup("x"): ex.mul(x, u)},
                    phi={ctx.lookup("u"): ex.pow_(u, 2)}),
        VectorField(ctx, xi={ctx.lookup("x"): y, ctx.lookup("y"): ex.mul(x, y)},
                    phi={ctx.lookup("u"): ex.add(x, u)}),
    ]
    for i in range(100):
        X = fields[i % len(fields)]
        Q = evolutionary_form(X)
        e, _, _ = gen_expr(rng, ctx, depth=2, funs=False)
        lhs = apply_prolonged(X, e)
        rhs = apply_prolonged(Q, e)
        for j, xs in enumerate(ctx.independents):
            rhs = ex.add(rhs, ex.mul(X.xi[xs], total_derivative(e, j, ctx)))
        assert lhs == rhs


def test_point_field_rejects_jet_coefficients(ctx):
    with pytest.raises(FieldError):
        VectorField(ctx, phi={ctx.lookup("u"): S(ctx, "u_x")})


def test_generalized_field_order_cap():
    ctx = JetContext(["x"], ["u"])
    too_deep = ex.Sym(ctx.jet("u", (5,)))
    with pytest.raises(FieldError):
        VectorField(ctx, phi={ctx.lookup("u"): too_deep}, kind="generalized")


# -- discrete maps -----------------------------------------------------------


def test_reflection_on_modified_laplace(ctx):
    u = ctx.lookup("u")
    delta = ex.add(S(ctx, "u_xx"), S(ctx, "u_yy"),
                   ex.mul(ex.ufun("g", ex.Sym(u)), S(ctx, "u_xxx")))
    R = DiscreteMap(ctx, xmap={ctx.lookup("x"): ex.mul(ex.MINUS_ONE, S(ctx, "x")),
                               ctx.lookup("y"): S(ctx, "y")},
                    umap={u: ex.Sym(u)}, period=2)
    got = prolong_discrete(R, delta)
    want = ex.add(S(ctx, "u_xx"), S(ctx, "u_yy"),
                  ex.mul(ex.MINUS_ONE, ex.ufun("g", ex.Sym(u)), S(ctx, "u_xxx")))
    assert got == want


def test_identity_map_fixes_everything(ctx):
    rng = random.Random(41)
    u = ctx.lookup("u")
    R = DiscreteMap(ctx, xmap={s: ex.Sym(s) for s in ctx.independents},
                    umap={u: ex.Sym(u)})
    for _ in range(30):
        e, _, _ = gen_expr(rng, ctx, depth=2, funs=False)
        assert prolong_discrete(R, e) == e


def test_translation_shifts_explicit_dependence_only(ctx):
    u = ctx.lookup("u")
    shift = ex.rational(7, 2)
    R = DiscreteMap(ctx, xmap={ctx.lookup("x"): ex.add(S(ctx, "x"), ex.Rat(shift.value)),
                               ctx.lookup("y"): S(ctx, "y")},
                    umap={u: ex.Sym(u)})
    assert prolong_discrete(R, S(ctx, "u_x")) == S(ctx, "u_x")
    got = prolong_discrete(R, ex.mul(S(ctx, "x"), S(ctx, "u_x")))
    want = ex.mul(ex.add(S(ctx, "x"), ex.Rat(shift.value)), S(ctx, "u_x"))
    assert got == want


def test_reflection_is_involution_randomized(ctx):
    rng = random.Random(43)
    u = ctx.lookup("u")
    R = DiscreteMap(ctx, xmap={ctx.lookup("x"): ex.mul(ex.MINUS_ONE, S(ctx, "x")),
                               ctx.lookup("y"): S(ctx, "y")},
                    umap={u: ex.Sym(u)}, period=2)
    for _ in range(50):
        e, _, _ = gen_expr(rng, ctx, depth=2, funs=False)
        assert prolong_discrete(R, prolong_discrete(R, e)) == e


def test_unsupported_maps_rejected(ctx):
    u = ctx.lookup("u")
    with pytest.raises(UnsupportedMapError):
        DiscreteMap(ctx, xmap={ctx.lookup("x"): ex.mul(S(ctx, "x"), S(ctx, "u")),
                               ctx.lookup("y"): S(ctx, "y")},
                    umap={u: ex.Sym(u)})
    with pytest.raises(UnsupportedMapError):
        DiscreteMap(ctx, xmap={ctx.lookup("x"): ex.pow_(S(ctx, "x"), 2),
                               ctx.lookup("y"): S(ctx, "y")},
                    umap={u: ex.Sym(u)})


def test_scaling_map_chain_rule(ctx):
    # x -> 2x: u_x picks up a factor 1/2, u_xx a factor 1/4
    u = ctx.lookup("u")
    R = DiscreteMap(ctx, xmap={ctx.lookup("x"): ex.mul(ex.integer(2), S(ctx, "x")),
                               ctx.lookup("y"): S(ctx, "y")},
                    umap={u: ex.Sym(u)})
    assert prolong_discrete(R, S(ctx, "u_x")) == \
        ex.mul(ex.rational(1, 2), S(ctx, "u_x"))
    assert prolong_discrete(R, S(ctx, "u_xx")) == \
        ex.mul(ex.rational(1, 4), S(ctx, "u_xx"))
