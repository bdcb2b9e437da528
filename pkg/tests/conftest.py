"""Shared contexts and random expression generators for the test suite."""

import math
from fractions import Fraction

import pytest

from psym import expr as ex
from psym.context import JetContext


@pytest.fixture
def kdv_ctx():
    return JetContext(["x", "t"], ["u"], parameters=["a", "b", "c"],
                      constants=["c1", "c2"])


@pytest.fixture
def laplace_ctx():
    # independents declared (y, x): the tie-break then prefers x-heavy jets
    return JetContext(["y", "x"], ["u"], functions={"g": 1})


def gen_expr(rng, ctx, depth=3, jets=True, funs=True, max_jet_order=3):
    """Random expression together with an independent float evaluator.

    Returns (expr, eval_fn, symbols): eval_fn(env: name->float) computes the
    same value directly, without the canonical constructors; env must bind
    every symbol in `symbols` (cancellation may remove some from the expr).
    """
    syms = list(ctx.independents) + list(ctx.parameters)
    if jets:
        pool = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1)]
        rng.shuffle(pool)
        for c in pool[:4]:
            if sum(c) <= max_jet_order:
                syms.append(ctx.jet(0, (c + (0,) * ctx.p)[:ctx.p]))
    for _ in range(50):
        try:
            e, fn = _gen(rng, ctx, syms, depth, funs)
            return e, fn, list(syms)
        except ex.MalformedExpressionError:
            continue  # random cancellation hit a literal 1/0; try again
    raise AssertionError("could not generate a well-formed expression")


def _gen(rng, ctx, syms, depth, funs):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.3:
            q = Fraction(rng.randint(-4, 4), rng.randint(1, 3))
            return ex.Rat(q), (lambda env, q=q: float(q))
        s = rng.choice(syms)
        return ex.Sym(s), (lambda env, n=s.name: env[n])
    kind = rng.choice(["add", "add", "mul", "mul", "pow", "fun"] if funs
                      else ["add", "add", "mul", "mul", "pow"])
    if kind == "add":
        n = rng.randint(2, 3)
        parts = [_gen(rng, ctx, syms, depth - 1, funs) for _ in range(n)]
        e = ex.add(*[p[0] for p in parts])
        fns = [p[1] for p in parts]
        return e, (lambda env, fns=fns: sum(f(env) for f in fns))
    if kind == "mul":
        n = rng.randint(2, 3)
        parts = [_gen(rng, ctx, syms, depth - 1, funs) for _ in range(n)]
        e = ex.mul(*[p[0] for p in parts])
        fns = [p[1] for p in parts]
        return e, (lambda env, fns=fns: math.prod(f(env) for f in fns))
    if kind == "pow":
        base, bf = _gen(rng, ctx, syms, depth - 1, funs)
        k = rng.choice([-2, -1, 2, 3])
        e = ex.pow_(base, k)
        return e, (lambda env, bf=bf, k=k: bf(env) ** k)
    name = rng.choice(["exp", "sin", "cos", "tanh", "sech", "sinh"])
    arg, af = _gen(rng, ctx, syms, depth - 1, funs)
    e = ex.fun(name, arg)
    pyfun = {"exp": math.exp, "sin": math.sin, "cos": math.cos,
             "tanh": math.tanh, "sinh": math.sinh,
             "sech": lambda v: 1.0 / math.cosh(v)}[name]
    return e, (lambda env, af=af, f=pyfun: f(af(env)))


def proportional(a, b):
    """Equal up to a nonzero rational multiple."""
    a = ex.normalize(a)
    b = ex.normalize(b)
    if a == ex.ZERO or b == ex.ZERO:
        return a == b
    ta = ex._terms_of(a)
    tb = ex._terms_of(b)
    key = lambda t: tuple((bb.key, (q.numerator, q.denominator)) for bb, q in t[1])
    ta.sort(key=key)
    tb.sort(key=key)
    ratio = ta[0][0] / tb[0][0]
    return ex.add(a, ex.mul(ex.Rat(-ratio), b)) == ex.ZERO


def eval_pair(e, fn, symbols, rng, tries=25):
    """Evaluate expr and reference fn at a common random point, skipping
    poles/overflow; returns (expr value, reference value) or None."""
    for _ in range(tries):
        env_named = {s.name: (rng.uniform(0.2, 1.4) * rng.choice([-1.0, 1.0]))
                     for s in symbols}
        env = {s: env_named[s.name] for s in symbols}
        try:
            ref = fn(env_named)
            got = ex.evaluate(e, env)
        except (ex.EvalDomainError, OverflowError, ZeroDivisionError, ValueError):
            continue
        if abs(ref) > 1e8:
            continue
        return got, ref
    return None
