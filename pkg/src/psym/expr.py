"""Immutable symbolic expressions over exact rationals.

Every constructor returns a canonical form: sums and products are flattened
and sorted under a fixed total order, like terms are collected, numeric
subexpressions folded, exp factors merged, and powers of equal bases
combined.  Structural equality of canonical forms is the engine's notion of
equality, so ``normalize(a - b) == ZERO`` is the symbolic zero test.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction


class ExprError(Exception):
    pass


class MalformedExpressionError(ExprError):
    pass


class CyclicSubstitutionError(ExprError):
    pass


class SamplingFailureError(ExprError):
    pass


class EvalDomainError(ExprError):
    """Evaluation hit a pole / branch cut (division by ~0, log of <=0, ...)."""


# symbol kinds, in canonical sort order
KIND_ANSATZ_CONSTANT = "ansatz-constant"
KIND_PARAMETER = "parameter"
KIND_GROUP_PARAMETER = "group-parameter"
KIND_INDEPENDENT = "independent"
KIND_DEPENDENT = "dependent"

_KIND_RANK = {
    KIND_ANSATZ_CONSTANT: 0,
    KIND_PARAMETER: 1,
    KIND_GROUP_PARAMETER: 2,
    KIND_INDEPENDENT: 3,
    KIND_DEPENDENT: 4,
}

ELEMENTARY = ("exp", "log", "sin", "cos", "tan", "sinh", "cosh", "tanh", "sech")


class Symbol:
    """A named scalar.  Dependent symbols carry a jet multi-index; the base
    dependent variable is the jet with the all-zero index."""

    __slots__ = ("name", "kind", "alpha", "index", "_key", "_hash")

    def __init__(self, name, kind, alpha=None, index=None):
        if kind not in _KIND_RANK:
            raise ValueError(f"unknown symbol kind {kind!r}")
        if kind == KIND_DEPENDENT:
            if alpha is None or index is None:
                raise ValueError("dependent symbols need alpha and multi-index")
            index = tuple(int(c) for c in index)
            if any(c < 0 for c in index):
                raise ValueError("multi-index counts must be non-negative")
        self.name = name
        self.kind = kind
        self.alpha = alpha
        self.index = index
        if kind == KIND_DEPENDENT:
            self._key = (_KIND_RANK[kind], alpha, sum(index), index, name)
        else:
            self._key = (_KIND_RANK[kind], name)
        self._hash = hash(self._key)

    @property
    def order(self):
        return sum(self.index) if self.kind == KIND_DEPENDENT else 0

    def is_jet(self):
        return self.kind == KIND_DEPENDENT

    def __eq__(self, other):
        return isinstance(other, Symbol) and self._key == other._key

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        return self._key < other._key

    def __repr__(self):
        return f"Symbol({self.name})"


class Expr:
    __slots__ = ("key",)

    def __eq__(self, other):
        return isinstance(other, Expr) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"<{to_str(self)}>"

    # convenience arithmetic, mostly for tests
    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __neg__(self):
        return mul(MINUS_ONE, self)

    def __sub__(self, other):
        return add(self, mul(MINUS_ONE, _coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), mul(MINUS_ONE, self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, pow_(_coerce(other), Fraction(-1)))

    def __rtruediv__(self, other):
        return mul(_coerce(other), pow_(self, Fraction(-1)))

    def __pow__(self, other):
        return pow_(self, other)


def _coerce(v):
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction)):
        return Rat(Fraction(v))
    raise TypeError(f"cannot coerce {v!r} to Expr")


class Rat(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = Fraction(value)
        self.key = (0, (self.value.numerator, self.value.denominator))


class Sym(Expr):
    __slots__ = ("sym",)

    def __init__(self, sym):
        self.sym = sym
        self.key = (1,) + sym._key


class Fun(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name, arg):
        self.name = name
        self.arg = arg
        self.key = (2, 0, name, arg.key)


class UFun(Expr):
    """Application of an uninterpreted function symbol."""

    __slots__ = ("fname", "args")

    def __init__(self, fname, args):
        self.fname = fname
        self.args = tuple(args)
        self.key = (2, 1, fname, (0,) * len(self.args), tuple(a.key for a in self.args))


class UDer(Expr):
    """Partial derivative of an uninterpreted function, one order per slot."""

    __slots__ = ("fname", "orders", "args")

    def __init__(self, fname, orders, args):
        self.fname = fname
        self.orders = tuple(int(k) for k in orders)
        self.args = tuple(args)
        if len(self.orders) != len(self.args):
            raise ValueError("one derivative order per argument slot")
        self.key = (2, 1, fname, self.orders, tuple(a.key for a in self.args))


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base, exp):
        self.base = base
        self.exp = Fraction(exp)
        self.key = (3, base.key, (self.exp.numerator, self.exp.denominator))


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        self.factors = tuple(factors)
        self.key = (4, tuple(f.key for f in self.factors))


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        self.terms = tuple(terms)
        self.key = (5, tuple(t.key for t in self.terms))


ZERO = Rat(0)
ONE = Rat(1)
MINUS_ONE = Rat(-1)


def sym(s):
    return Sym(s)


def integer(n):
    return Rat(Fraction(n))


def rational(p, q=1):
    if q == 0:
        raise MalformedExpressionError("division by the literal zero constant")
    return Rat(Fraction(p, q))


# ---------------------------------------------------------------------------
# term algebra: every expression is a sum of (coeff, monomial) pairs where a
# monomial is a sorted tuple of (base, exponent) over primitive bases.


def _base_exp(f):
    if isinstance(f, Pow):
        return f.base, f.exp
    return f, Fraction(1)


def _mono_tuple(d):
    items = [(b, e) for (b, e) in d.values() if e != 0]
    items.sort(key=lambda be: be[0].key)
    return tuple(items)


def _fold_rat_pow(value, q):
    """Exact Fraction ** Fraction when the result is rational, else None."""
    if q.denominator == 1:
        n = q.numerator
        if value == 0:
            if n < 0:
                raise MalformedExpressionError("division by the literal zero constant")
            return Fraction(0) if n > 0 else Fraction(1)
        return value ** n
    if value == 0:
        if q < 0:
            raise MalformedExpressionError("division by the literal zero constant")
        return Fraction(0)
    if value < 0:
        return None
    num = _exact_root(value.numerator, q.denominator)
    den = _exact_root(value.denominator, q.denominator)
    if num is None or den is None:
        return None
    return Fraction(num, den) ** q.numerator


def _exact_root(m, n):
    if m == 0:
        return 0
    r = round(m ** (1.0 / n))
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand ** n == m:
            return cand
    return None


def _terms_of(e):
    """Expand a canonical expression into primitive (coeff, mono) terms."""
    if isinstance(e, Rat):
        return [(e.value, ())] if e.value != 0 else []
    if isinstance(e, Add):
        out = []
        for t in e.terms:
            out.extend(_terms_of(t))
        return out
    if isinstance(e, Mul):
        return _expand_product(list(e.factors))
    return _expand_product([e])


def _expand_product(factors):
    """Cartesian expansion of a factor list into primitive terms."""
    terms = [(Fraction(1), {})]
    for f in factors:
        fterms = _factor_terms(f)
        new = []
        for c1, d1 in terms:
            for c2, mono in fterms:
                d = dict(d1)
                c = c1 * c2
                for b, q in mono:
                    c = _mono_mul_in(d, b, q, c)
                new.append((c, d))
        terms = new
    out = []
    for c, d in terms:
        out.extend(_finalize_term(c, d))
    return out


def _factor_terms(f):
    """Terms of a single factor, as (coeff, ((base, exp), ...)) with primitive bases."""
    if isinstance(f, Rat):
        return [(f.value, ())] if f.value != 0 else []
    if isinstance(f, Add):
        out = []
        for t in f.terms:
            out.extend(_terms_of(t))
        return out
    if isinstance(f, Mul):
        return _terms_of(f)
    if isinstance(f, Pow):
        b, q = f.base, f.exp
        if isinstance(b, Add) and q.denominator == 1 and q > 0:
            return _expand_product([b] * q.numerator)
        return [(Fraction(1), ((b, q),))]
    return [(Fraction(1), ((f, Fraction(1)),))]


def _mono_mul_in(d, base, q, coeff):
    """Merge base**q into monomial dict d, returning the updated coefficient."""
    if isinstance(base, Rat):
        folded = _fold_rat_pow(base.value, q)
        if folded is not None:
            return coeff * folded
    k = base.key
    if k in d:
        b0, e0 = d[k]
        d[k] = (b0, e0 + q)
    else:
        d[k] = (base, q)
    return coeff


def _finalize_term(coeff, d):
    """Apply post-merge rewrites to one monomial: exp-merging, rational-power
    folding, sech^2 -> 1 - tanh^2, expansion of integer powers of sums."""
    if coeff == 0:
        return []
    exp_args = []
    rest = {}
    pending = []  # factors that expand into sums
    for k, (b, q) in d.items():
        if q == 0:
            continue
        if isinstance(b, Fun) and b.name == "exp":
            exp_args.append(mul(Rat(q), b.arg) if q != 1 else b.arg)
            continue
        if isinstance(b, Rat):
            folded = _fold_rat_pow(b.value, q)
            if folded is not None:
                coeff *= folded
                continue
            rest[k] = (b, q)
            continue
        if isinstance(b, Fun) and b.name == "sech" and q.denominator == 1 and q >= 2:
            n = q.numerator
            ident = add(ONE, Mul([MINUS_ONE, Pow(Fun("tanh", b.arg), Fraction(2))]))
            pending.extend([ident] * (n // 2))
            if n % 2:
                rest[k] = (b, Fraction(1))
            continue
        if isinstance(b, Add) and q.denominator == 1 and q > 0:
            pending.extend([b] * q.numerator)
            continue
        if isinstance(b, Pow):
            # nested power: merge when the outer exponent is an integer
            if q.denominator == 1:
                inner = pow_(b.base, b.exp * q)
                pending.append(inner)
                continue
            rest[k] = (b, q)
            continue
        rest[k] = (b, q)
    if exp_args:
        arg = add(*exp_args)
        if arg != ZERO:
            f = Fun("exp", arg)
            rest[f.key] = (f, Fraction(1))
    if not pending:
        return [(coeff, _mono_tuple(rest))]
    base_term = _build_term(coeff, _mono_tuple(rest))
    return _expand_product([base_term] + pending)


def _build_term(coeff, mono):
    if coeff == 0:
        return ZERO
    factors = []
    for b, e in mono:
        factors.append(b if e == 1 else Pow(b, e))
    if not factors:
        return Rat(coeff)
    if coeff != 1:
        factors = [Rat(coeff)] + factors
    if len(factors) == 1:
        return factors[0]
    return Mul(factors)


def _frac_gcd(values):
    num = 0
    den = 1
    for v in values:
        num = math.gcd(num, abs(v.numerator))
        den = den * v.denominator // math.gcd(den, v.denominator)
    return Fraction(num, den)


def _collect(terms):
    acc = {}
    for c, mono in terms:
        k = tuple((b.key, e) for b, e in mono)
        if k in acc:
            acc[k] = (acc[k][0] + c, mono)
        else:
            acc[k] = (c, mono)
    out = [(c, mono) for c, mono in acc.values() if c != 0]
    out.sort(key=lambda t: tuple((b.key, (e.numerator, e.denominator)) for b, e in t[1]))
    return out


def _from_terms(terms):
    terms = _collect(terms)
    if not terms:
        return ZERO
    if len(terms) == 1:
        return _build_term(*terms[0])
    return _extract_content(terms)


def _extract_content(terms):
    """Pull common monomial content out of a multi-term sum so products like
    x*(u_x^2 - u*u_xx) keep their factored shape."""
    content = _frac_gcd([c for c, _ in terms])
    if terms[0][0] < 0:
        content = -content
    base_maps = []
    for _, mono in terms:
        base_maps.append({b.key: (b, e) for b, e in mono})
    common = []
    first = terms[0][1]
    for b, _ in first:
        exps = []
        ok = True
        for m in base_maps:
            if b.key not in m:
                ok = False
                break
            exps.append(m[b.key][1])
        if not ok:
            continue
        if all(e > 0 for e in exps):
            g = min(exps)
        elif all(e < 0 for e in exps):
            g = max(exps)
        else:
            continue
        if isinstance(b, Add) and any(e != g for e in exps):
            continue  # a positive leftover power of a sum would re-expand
        common.append((b, g))
    if content == 1 and not common:
        return Add([_build_term(c, m) for c, m in terms])
    inner = []
    cset = {b.key: g for b, g in common}
    for c, mono in terms:
        reduced = []
        for b, e in mono:
            g = cset.get(b.key)
            if g is not None:
                e = e - g
            if e != 0:
                reduced.append((b, e))
        inner.append((c / content, tuple(reduced)))
    inner.sort(key=lambda t: tuple((b.key, (e.numerator, e.denominator)) for b, e in t[1]))
    inner_expr = Add([_build_term(c, m) for c, m in inner])
    factors = [b if g == 1 else Pow(b, g) for b, g in common]
    factors.append(inner_expr)
    factors.sort(key=lambda f: _base_exp(f)[0].key)
    if content != 1:
        factors = [Rat(content)] + factors
    return Mul(factors)


# ---------------------------------------------------------------------------
# public constructors


def add(*terms):
    flat = []
    for t in terms:
        flat.extend(_terms_of(_coerce(t)))
    return _from_terms(flat)


def mul(*factors):
    terms = _expand_product([_coerce(f) for f in factors])
    return _from_terms(terms)


def pow_(base, exp):
    base = _coerce(base)
    if isinstance(exp, Expr):
        if not isinstance(exp, Rat):
            raise MalformedExpressionError("exponents must be rational constants")
        exp = exp.value
    q = Fraction(exp)
    if q == 0:
        if base == ZERO:
            return ONE
        return ONE
    if q == 1:
        return base
    if isinstance(base, Rat):
        folded = _fold_rat_pow(base.value, q)
        if folded is not None:
            return Rat(folded)
        return Pow(base, q)
    if isinstance(base, Mul):
        return mul(*[pow_(f, q) for f in base.factors])
    if isinstance(base, Pow):
        if q.denominator == 1:
            return pow_(base.base, base.exp * q)
        return Pow(base, q)
    if isinstance(base, Fun) and base.name == "exp":
        return fun("exp", mul(Rat(q), base.arg))
    if isinstance(base, Fun) and base.name == "sech" and q.denominator == 1 and q >= 2:
        return _from_terms(_expand_product([Pow(base, q)]))
    if isinstance(base, Add) and q.denominator == 1 and q > 0:
        return _from_terms(_expand_product([base] * q.numerator))
    return Pow(base, q)


def fun(name, arg):
    arg = _coerce(arg)
    if name == "sqrt":
        return pow_(arg, Fraction(1, 2))
    if name not in ELEMENTARY:
        raise MalformedExpressionError(f"unknown elementary function {name!r}")
    if isinstance(arg, Rat) and arg.value == 0:
        if name == "log":
            raise MalformedExpressionError("log of the literal zero constant")
        return {"exp": ONE, "sin": ZERO, "cos": ONE, "tan": ZERO,
                "sinh": ZERO, "cosh": ONE, "tanh": ZERO, "sech": ONE}[name]
    if name == "log" and isinstance(arg, Rat) and arg.value == 1:
        return ZERO
    if name == "exp" and isinstance(arg, Fun) and arg.name == "log":
        return arg.arg
    if name == "log" and isinstance(arg, Fun) and arg.name == "exp":
        return arg.arg
    return Fun(name, arg)


def ufun(fname, *args):
    return UFun(fname, [_coerce(a) for a in args])


def uder(fname, orders, args):
    orders = tuple(int(k) for k in orders)
    if all(k == 0 for k in orders):
        return UFun(fname, args)
    return UDer(fname, orders, [_coerce(a) for a in args])


def normalize(e):
    """Rebuild through the canonical constructors (idempotent)."""
    e = _coerce(e)
    if isinstance(e, (Rat, Sym)):
        return e
    if isinstance(e, Add):
        return add(*[normalize(t) for t in e.terms])
    if isinstance(e, Mul):
        return mul(*[normalize(f) for f in e.factors])
    if isinstance(e, Pow):
        return pow_(normalize(e.base), e.exp)
    if isinstance(e, Fun):
        return fun(e.name, normalize(e.arg))
    if isinstance(e, UFun):
        return UFun(e.fname, [normalize(a) for a in e.args])
    if isinstance(e, UDer):
        return uder(e.fname, e.orders, [normalize(a) for a in e.args])
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# structural queries


def children(e):
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, Fun):
        return (e.arg,)
    if isinstance(e, (UFun, UDer)):
        return e.args
    return ()


def free_symbols(e):
    out = set()
    _free_symbols(e, out)
    return out


def _free_symbols(e, out):
    if isinstance(e, Sym):
        out.add(e.sym)
        return
    for c in children(e):
        _free_symbols(c, out)


def jet_symbols(e):
    return {s for s in free_symbols(e) if s.is_jet()}


def ufunc_names(e):
    out = set()
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, (UFun, UDer)):
            out.add((x.fname, len(x.args)))
        stack.extend(children(x))
    return out


def contains_symbol(e, s):
    if isinstance(e, Sym):
        return e.sym == s
    return any(contains_symbol(c, s) for c in children(e))


def factor_split(e):
    """Top-level product factors of the canonical form, content discarded."""
    if isinstance(e, Mul):
        return [f for f in e.factors if not isinstance(f, Rat)]
    if isinstance(e, Rat):
        return []
    return [e]


# ---------------------------------------------------------------------------
# differentiation (symbol-wise; jet coordinates are independent symbols here)

_FUN_DERIV = {
    "exp": lambda a: Fun("exp", a),
    "log": lambda a: pow_(a, Fraction(-1)),
    "sin": lambda a: fun("cos", a),
    "cos": lambda a: mul(MINUS_ONE, fun("sin", a)),
    "tan": lambda a: add(ONE, pow_(fun("tan", a), 2)),
    "sinh": lambda a: fun("cosh", a),
    "cosh": lambda a: fun("sinh", a),
    "tanh": lambda a: add(ONE, mul(MINUS_ONE, pow_(fun("tanh", a), 2))),
    "sech": lambda a: mul(MINUS_ONE, fun("sech", a), fun("tanh", a)),
}


def diff(e, s):
    """Exact partial derivative with respect to symbol s."""
    if isinstance(e, Rat):
        return ZERO
    if isinstance(e, Sym):
        return ONE if e.sym == s else ZERO
    if isinstance(e, Add):
        return add(*[diff(t, s) for t in e.terms])
    if isinstance(e, Mul):
        parts = []
        for i, f in enumerate(e.factors):
            df = diff(f, s)
            if df == ZERO:
                continue
            rest = list(e.factors[:i]) + list(e.factors[i + 1:])
            parts.append(mul(df, *rest))
        return add(*parts) if parts else ZERO
    if isinstance(e, Pow):
        db = diff(e.base, s)
        if db == ZERO:
            return ZERO
        return mul(Rat(e.exp), pow_(e.base, e.exp - 1), db)
    if isinstance(e, Fun):
        da = diff(e.arg, s)
        if da == ZERO:
            return ZERO
        return mul(_FUN_DERIV[e.name](e.arg), da)
    if isinstance(e, UFun):
        parts = []
        for i, a in enumerate(e.args):
            da = diff(a, s)
            if da == ZERO:
                continue
            orders = [0] * len(e.args)
            orders[i] = 1
            parts.append(mul(UDer(e.fname, orders, e.args), da))
        return add(*parts) if parts else ZERO
    if isinstance(e, UDer):
        parts = []
        for i, a in enumerate(e.args):
            da = diff(a, s)
            if da == ZERO:
                continue
            orders = list(e.orders)
            orders[i] += 1
            parts.append(mul(UDer(e.fname, orders, e.args), da))
        return add(*parts) if parts else ZERO
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# substitution


def substitute(e, rules):
    """Simultaneous substitution of whole symbols, then renormalization.

    Self-referential rules (y -> -y) are fine; a proper cycle between two or
    more rules is rejected.
    """
    if not rules:
        return e
    _check_cycles(rules)
    return _subst(e, rules)


def _check_cycles(rules):
    graph = {}
    for s, repl in rules.items():
        graph[s] = {t for t in free_symbols(repl) if t in rules and t != s}
    seen = {}

    def visit(node, stack):
        seen[node] = "gray"
        for nxt in graph.get(node, ()):
            if seen.get(nxt) == "gray":
                raise CyclicSubstitutionError(
                    f"cyclic substitution through {node.name} and {nxt.name}")
            if nxt not in seen:
                visit(nxt, stack)
        seen[node] = "black"

    for s in graph:
        if s not in seen:
            visit(s, [])


def _subst(e, rules):
    if isinstance(e, Rat):
        return e
    if isinstance(e, Sym):
        return rules.get(e.sym, e)
    if isinstance(e, Add):
        return add(*[_subst(t, rules) for t in e.terms])
    if isinstance(e, Mul):
        return mul(*[_subst(f, rules) for f in e.factors])
    if isinstance(e, Pow):
        return pow_(_subst(e.base, rules), e.exp)
    if isinstance(e, Fun):
        return fun(e.name, _subst(e.arg, rules))
    if isinstance(e, UFun):
        return UFun(e.fname, [_subst(a, rules) for a in e.args])
    if isinstance(e, UDer):
        return uder(e.fname, e.orders, [_subst(a, rules) for a in e.args])
    raise TypeError(f"not an Expr: {e!r}")


def replace_power(e, base_sym, k, rhs):
    """Rewrite occurrences base_sym**q (q integer >= k) as base_sym**(q-k)*rhs."""
    target = Sym(base_sym)

    def walk(x):
        if isinstance(x, Pow) and x.base == target:
            q = x.exp
            if q.denominator == 1 and q.numerator >= k:
                return mul(pow_(target, q - k), rhs)
            return x
        if isinstance(x, (Rat, Sym)):
            return x
        if isinstance(x, Add):
            return add(*[walk(t) for t in x.terms])
        if isinstance(x, Mul):
            return mul(*[walk(f) for f in x.factors])
        if isinstance(x, Pow):
            return pow_(walk(x.base), x.exp)
        if isinstance(x, Fun):
            return fun(x.name, walk(x.arg))
        if isinstance(x, UFun):
            return UFun(x.fname, [walk(a) for a in x.args])
        if isinstance(x, UDer):
            return uder(x.fname, x.orders, [walk(a) for a in x.args])
        raise TypeError(f"not an Expr: {x!r}")

    return walk(e)


def poly_degree_in(e, s):
    """Degree of e as a polynomial in symbol s, or None if non-polynomial."""
    target = Sym(s)

    def deg(x):
        if x == target:
            return 1
        if isinstance(x, (Rat, Sym)):
            return 0
        if isinstance(x, Add):
            ds = [deg(t) for t in x.terms]
            if any(d is None for d in ds):
                return None
            return max(ds)
        if isinstance(x, Mul):
            total = 0
            for f in x.factors:
                d = deg(f)
                if d is None:
                    return None
                total += d
            return total
        if isinstance(x, Pow):
            d = deg(x.base)
            if d is None:
                return None
            if d == 0:
                return 0
            if x.exp.denominator != 1 or x.exp < 0:
                return None
            return d * x.exp.numerator
        if contains_symbol(x, s):
            return None
        return 0

    return deg(e)


def coefficient_of(e, s, k):
    """Coefficient of s**k when e is polynomial in s (exact, via terms)."""
    target_key = Sym(s).key
    out = []
    for c, mono in _terms_of(e):
        exps = {bk.key: q for bk, q in mono}
        q = exps.get(target_key, Fraction(0))
        if q == k:
            reduced = tuple((b, e2) for b, e2 in mono if b.key != target_key)
            out.append((c, reduced))
    return _from_terms(out)


def clear_denominators(e):
    """Multiply through by sum-denominators so every power of an Add base is
    non-negative; zero-ness is preserved wherever the denominators are
    nonzero.  Exponent bumps happen per monomial, so (c1+t)^(-2) against an
    expanded numerator cancels exactly."""
    terms = _terms_of(e)
    need = {}
    bases = {}
    for _, mono in terms:
        for b, q in mono:
            if isinstance(b, Add) and q < 0:
                k = need.get(b.key, 0)
                need[b.key] = max(k, int(math.ceil(-q)))
                bases[b.key] = b
    if not need:
        return _from_terms(terms)
    out = []
    for c, mono in terms:
        newmono = {}
        pending = []
        seen = set()
        for b, q in mono:
            if b.key in need:
                seen.add(b.key)
                q2 = q + need[b.key]
                if q2 == 0:
                    continue
                if isinstance(b, Add) and q2.denominator == 1 and q2 > 0:
                    pending.extend([b] * q2.numerator)
                    continue
                newmono[b.key] = (b, q2)
            else:
                newmono[b.key] = (b, q)
        for key, k in need.items():
            if key not in seen:
                pending.extend([bases[key]] * k)
        base_term = _build_term(c, _mono_tuple(newmono))
        out.extend(_expand_product([base_term] + pending))
    return _from_terms(out)


def symbolically_zero(e):
    """Canonical-form zero test, retrying with cleared denominators."""
    e = normalize(e)
    if e == ZERO:
        return True
    stack = [e]
    has_inverse_sum = False
    while stack:
        x = stack.pop()
        if isinstance(x, Pow) and isinstance(x.base, Add) and x.exp < 0:
            has_inverse_sum = True
            break
        stack.extend(children(x))
    if not has_inverse_sum:
        return False
    return clear_denominators(e) == ZERO


# ---------------------------------------------------------------------------
# numeric evaluation

_FUN_EVAL = {
    "exp": math.exp, "log": math.log, "sin": math.sin, "cos": math.cos,
    "tan": math.tan, "sinh": math.sinh, "cosh": math.cosh, "tanh": math.tanh,
    "sech": lambda v: 1.0 / math.cosh(v),
}

_TINY = 1e-30
_HUGE = 1e100


def evaluate(e, env, ufuncs=None):
    """Evaluate at a real point.  env maps Symbol -> float, ufuncs maps an
    uninterpreted name to a PolyRealization.  Raises EvalDomainError at poles.
    """
    v = _eval(e, env, ufuncs or {})
    if not math.isfinite(v) or abs(v) > _HUGE:
        raise EvalDomainError("non-finite value")
    return v


def _eval(e, env, ufuncs):
    if isinstance(e, Rat):
        return float(e.value)
    if isinstance(e, Sym):
        try:
            return float(env[e.sym])
        except KeyError:
            raise EvalDomainError(f"no value for symbol {e.sym.name}")
    if isinstance(e, Add):
        return sum(_eval(t, env, ufuncs) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= _eval(f, env, ufuncs)
        return out
    if isinstance(e, Pow):
        b = _eval(e.base, env, ufuncs)
        q = e.exp
        if q < 0 and abs(b) < _TINY:
            raise EvalDomainError("pole")
        if q.denominator != 1:
            if b < 0:
                raise EvalDomainError("fractional power of a negative value")
            return b ** float(q)
        try:
            return b ** q.numerator
        except OverflowError:
            raise EvalDomainError("overflow")
    if isinstance(e, Fun):
        a = _eval(e.arg, env, ufuncs)
        if e.name == "log" and a <= 0:
            raise EvalDomainError("log of a non-positive value")
        if e.name == "tan" and abs(math.cos(a)) < _TINY:
            raise EvalDomainError("tan pole")
        if e.name in ("exp", "sinh", "cosh") and abs(a) > 300:
            raise EvalDomainError("overflow")
        return _FUN_EVAL[e.name](a)
    if isinstance(e, (UFun, UDer)):
        real = ufuncs.get(e.fname)
        if real is None:
            raise EvalDomainError(f"no realization for uninterpreted {e.fname}")
        args = [_eval(a, env, ufuncs) for a in e.args]
        orders = e.orders if isinstance(e, UDer) else (0,) * len(e.args)
        return real(orders, args)
    raise TypeError(f"not an Expr: {e!r}")


class PolyRealization:
    """Random low-degree polynomial standing in for an uninterpreted function.

    Derivatives of any order are evaluated exactly from the coefficients, so
    f and f' realizations stay consistent.
    """

    def __init__(self, nargs, rng, degree=3, coeff_range=(-1.0, 1.0)):
        self.nargs = nargs
        self.coeffs = {}
        for mono in _monomials_upto(nargs, degree):
            self.coeffs[mono] = rng.uniform(*coeff_range)

    def __call__(self, orders, args):
        total = 0.0
        for mono, c in self.coeffs.items():
            term = c
            ok = True
            for i in range(self.nargs):
                m, k = mono[i], orders[i]
                if k > m:
                    ok = False
                    break
                term *= math.perm(m, k) * (args[i] ** (m - k))
            if ok:
                total += term
        return total


def _monomials_upto(n, degree):
    if n == 0:
        yield ()
        return
    for d in range(degree + 1):
        for rest in _monomials_upto(n - 1, degree - d):
            yield (d,) + rest


# ---------------------------------------------------------------------------
# probabilistic zero testing

DEFAULT_SAMPLES = 12
DEFAULT_TOL = 1e-9
SAMPLE_LO, SAMPLE_HI = 0.1, 2.0


class ZeroStatus:
    __slots__ = ("verdict", "witness", "max_abs")

    SYMBOLIC = "symbolically-zero"
    NUMERIC = "numerically-zero"
    NONZERO = "nonzero"
    UNKNOWN = "unknown"

    def __init__(self, verdict, witness=None, max_abs=0.0):
        self.verdict = verdict
        self.witness = witness
        self.max_abs = max_abs

    def is_zero(self):
        return self.verdict in (self.SYMBOLIC, self.NUMERIC)

    def __repr__(self):
        return f"ZeroStatus({self.verdict})"


def sample_value(rng, lo=SAMPLE_LO, hi=SAMPLE_HI):
    v = rng.uniform(lo, hi)
    return v if rng.random() < 0.5 else -v


def make_realizations(e, rng):
    return {name: PolyRealization(nargs, rng) for name, nargs in sorted(ufunc_names(e))}


def is_zero(e, mode="symbolic-then-numeric", tol=DEFAULT_TOL, rng=None,
            samples=DEFAULT_SAMPLES, boxes=None):
    """Zero test: canonical-form check first, then random numeric sampling.

    boxes optionally maps Symbol -> (lo, hi) sampled uniformly (both signs
    unless lo >= 0).
    """
    e = normalize(e)
    if symbolically_zero(e):
        return ZeroStatus(ZeroStatus.SYMBOLIC)
    if mode == "symbolic-only":
        return ZeroStatus(ZeroStatus.UNKNOWN)
    rng = rng or random.Random(0)
    syms = sorted(free_symbols(e))
    reals = make_realizations(e, rng)
    max_abs = 0.0
    produced = 0
    attempts = 0
    while produced < samples:
        attempts += 1
        if attempts > samples * 20:
            raise SamplingFailureError("persistent evaluation failure while sampling")
        env = {}
        for s in syms:
            if boxes and s in boxes:
                lo, hi = boxes[s]
                env[s] = rng.uniform(lo, hi)
            else:
                env[s] = sample_value(rng)
        try:
            v = evaluate(e, env, reals)
        except EvalDomainError:
            continue
        produced += 1
        av = abs(v)
        max_abs = max(max_abs, av)
        if av > math.sqrt(tol):
            return ZeroStatus(ZeroStatus.NONZERO,
                              witness={s.name: env[s] for s in syms}, max_abs=av)
    if max_abs <= tol:
        return ZeroStatus(ZeroStatus.NUMERIC, max_abs=max_abs)
    return ZeroStatus(ZeroStatus.UNKNOWN, max_abs=max_abs)


# ---------------------------------------------------------------------------
# printing (canonical infix; parseable back by the DSL)


def to_str(e):
    return _print(e, 0)


# precedence levels: 0 sum, 1 product, 2 power-base/unary, 3 atom


def _print(e, level):
    if isinstance(e, Rat):
        v = e.value
        if v.denominator == 1:
            s = str(v.numerator)
        else:
            s = f"{v.numerator}/{v.denominator}"
        if v < 0 and level >= 1:
            return f"({s})"
        return s
    if isinstance(e, Sym):
        return e.sym.name
    if isinstance(e, Add):
        parts = []
        for i, t in enumerate(e.terms):
            c, body = _split_sign(t)
            if i == 0:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append((" - " if c < 0 else " + ") + body)
        s = "".join(parts)
        return f"({s})" if level >= 1 else s
    if isinstance(e, Mul):
        c, body = _split_sign(e)
        s = ("-" if c < 0 else "") + body
        return f"({s})" if level >= 2 or (c < 0 and level >= 1) else s
    if isinstance(e, Pow):
        if e.exp == Fraction(1, 2):
            return f"sqrt({_print(e.base, 0)})"
        if isinstance(e.base, (Add, Mul, Pow, Rat)):
            b = f"({_print(e.base, 0)})"
        else:
            b = _print(e.base, 2)
        q = e.exp
        if q.denominator == 1 and q > 0:
            return f"{b}^{q.numerator}"
        if q.denominator == 1:
            return f"{b}^({q.numerator})"
        return f"{b}^({q.numerator}/{q.denominator})"
    if isinstance(e, Fun):
        return f"{e.name}({_print(e.arg, 0)})"
    if isinstance(e, UFun):
        args = ", ".join(_print(a, 0) for a in e.args)
        return f"{e.fname}({args})"
    if isinstance(e, UDer):
        args = ", ".join(_print(a, 0) for a in e.args)
        if len(e.orders) == 1 and e.orders[0] <= 3:
            return e.fname + "'" * e.orders[0] + f"({args})"
        orders = ", ".join(str(k) for k in e.orders)
        return f"pd({e.fname}, {orders})({args})"
    raise TypeError(f"not an Expr: {e!r}")


def _split_sign(t):
    """Return (sign, printed body without leading sign) for a sum term."""
    if isinstance(t, Rat):
        v = t.value
        return (-1 if v < 0 else 1), _print(Rat(abs(v)), 1)
    if isinstance(t, Mul):
        factors = list(t.factors)
        sign = 1
        if isinstance(factors[0], Rat):
            c = factors[0].value
            if c < 0:
                sign = -1
                c = -c
            if c == 1:
                factors = factors[1:]
            else:
                factors = [Rat(c)] + factors[1:]
        if not factors:
            return sign, "1"
        if len(factors) == 1:
            return sign, _print(factors[0], 1)
        return sign, "*".join(_print(f, 2) for f in factors)
    return 1, _print(t, 1)
