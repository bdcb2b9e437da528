"""Total derivatives, vector-field prolongation, and discrete-map pullbacks."""

from __future__ import annotations

from fractions import Fraction

from . import expr as ex
from .context import mi_add, mi_order, unit_index


class FieldError(Exception):
    pass


class UnsupportedMapError(Exception):
    pass


MAX_CHARACTERISTIC_ORDER = 4


def total_derivative(e, i, ctx):
    """D_i e = de/dx_i + sum over jets u_J of u_{J+e_i} * de/du_J."""
    xi = ctx.independents[i]
    out = ex.diff(e, xi)
    parts = [out] if out != ex.ZERO else []
    for s in sorted(ex.jet_symbols(e)):
        d = ex.diff(e, s)
        if d == ex.ZERO:
            continue
        parts.append(ex.mul(ex.Sym(ctx.bump(s, i)), d))
    return ex.add(*parts) if parts else ex.ZERO


def total_derivative_mi(e, index, ctx):
    """Iterated total derivative for a whole multi-index."""
    for i, c in enumerate(index):
        for _ in range(c):
            e = total_derivative(e, i, ctx)
    return e


class VectorField:
    """Point field xi_i d/dx_i + phi_a d/du_a, or a generalized field with
    xi = 0 and jet-dependent characteristics."""

    def __init__(self, ctx, xi=None, phi=None, kind="point", name=None):
        self.ctx = ctx
        self.kind = kind
        self.name = name
        self.xi = {s: ex.ZERO for s in ctx.independents}
        self.phi = {s: ex.ZERO for s in ctx.dependents}
        for s, e in (xi or {}).items():
            self.xi[s] = ex.normalize(e)
        for s, e in (phi or {}).items():
            self.phi[s] = ex.normalize(e)
        self._char = None
        self._coeffs = {}
        self._validate()

    def _validate(self):
        if self.kind == "point":
            for e in list(self.xi.values()) + list(self.phi.values()):
                if any(s.order >= 1 for s in ex.jet_symbols(e)):
                    raise FieldError("point-field coefficients must not contain jet "
                                     "coordinates of order >= 1")
        elif self.kind == "generalized":
            if any(e != ex.ZERO for e in self.xi.values()):
                raise FieldError("generalized fields have xi = 0")
            for e in self.phi.values():
                orders = [s.order for s in ex.jet_symbols(e)]
                if orders and max(orders) > MAX_CHARACTERISTIC_ORDER:
                    raise FieldError("characteristic jet order capped at "
                                     f"{MAX_CHARACTERISTIC_ORDER}")
        else:
            raise FieldError(f"unknown field kind {self.kind!r}")

    def is_trivial(self):
        return (all(e == ex.ZERO for e in self.xi.values())
                and all(e == ex.ZERO for e in self.phi.values()))

    def characteristic(self, dep):
        """Q_a = phi_a - xi_i * u_{a,i}."""
        if self.kind == "generalized":
            return self.phi[dep]
        parts = [self.phi[dep]]
        for i, xs in enumerate(self.ctx.independents):
            xi = self.xi[xs]
            if xi == ex.ZERO:
                continue
            u_i = ex.Sym(self.ctx.bump(dep, i))
            parts.append(ex.mul(ex.MINUS_ONE, xi, u_i))
        return ex.add(*parts)

    def scaled(self, c):
        return VectorField(
            self.ctx,
            xi={s: ex.mul(ex.Rat(Fraction(c)), e) for s, e in self.xi.items()},
            phi={s: ex.mul(ex.Rat(Fraction(c)), e) for s, e in self.phi.items()},
            kind=self.kind)

    def plus(self, other):
        if self.kind != other.kind:
            raise FieldError("cannot add fields of different kinds")
        return VectorField(
            self.ctx,
            xi={s: ex.add(self.xi[s], other.xi[s]) for s in self.xi},
            phi={s: ex.add(self.phi[s], other.phi[s]) for s in self.phi},
            kind=self.kind)


def prolong_coefficient(X, dep, index, ctx=None):
    """Coefficient attached to d/du_{a,J} in the prolonged field.

    phi^J = D_J(Q_a) + xi_i * u_{a, J+e_i}; for generalized fields it is
    D_J(phi_a).  Memoized per (field, a, J).
    """
    ctx = ctx or X.ctx
    index = tuple(index)
    key = (dep.alpha, index)
    got = X._coeffs.get(key)
    if got is not None:
        return got
    if X.kind == "generalized":
        val = total_derivative_mi(X.phi[dep], index, ctx)
    else:
        dq = total_derivative_mi(X.characteristic(dep), index, ctx)
        parts = [dq] if dq != ex.ZERO else []
        for i, xs in enumerate(ctx.independents):
            xi = X.xi[xs]
            if xi == ex.ZERO:
                continue
            bumped = ctx.jet(dep, mi_add(index, unit_index(ctx.p, i)))
            parts.append(ex.mul(xi, ex.Sym(bumped)))
        val = ex.add(*parts) if parts else ex.ZERO
    X._coeffs[key] = val
    return val


def apply_prolonged(X, e, ctx=None):
    """X* e: only the jet coordinates actually present in e contribute."""
    ctx = ctx or X.ctx
    parts = []
    if X.kind == "point":
        for i, xs in enumerate(ctx.independents):
            xi = X.xi[xs]
            if xi == ex.ZERO:
                continue
            d = ex.diff(e, xs)
            if d != ex.ZERO:
                parts.append(ex.mul(xi, d))
    for s in sorted(ex.jet_symbols(e)):
        d = ex.diff(e, s)
        if d == ex.ZERO:
            continue
        dep = ctx.dependents[s.alpha]
        coeff = prolong_coefficient(X, dep, s.index, ctx)
        if coeff == ex.ZERO:
            continue
        parts.append(ex.mul(coeff, d))
    return ex.add(*parts) if parts else ex.ZERO


def evolutionary_form(X):
    """Generalized representative with characteristic Q_a = phi_a - xi_i u_{a,i}."""
    if X.kind != "point":
        raise FieldError("evolutionary form is defined for point fields")
    return VectorField(X.ctx, phi={d: X.characteristic(d) for d in X.ctx.dependents},
                       kind="generalized",
                       name=f"ev({X.name})" if X.name else None)


class DiscreteMap:
    """Affine map on the independents, x~ = A x + b, with u~_a = B_a(x, u)."""

    def __init__(self, ctx, xmap, umap, period=None, name=None):
        self.ctx = ctx
        self.name = name
        self.period = period
        p = ctx.p
        self.A = [[Fraction(0)] * p for _ in range(p)]
        self.b = [ex.ZERO] * p
        for i, xs in enumerate(ctx.independents):
            e = ex.normalize(xmap[xs])
            if any(s.kind == ex.KIND_DEPENDENT for s in ex.free_symbols(e)):
                raise UnsupportedMapError("x~ must not depend on u")
            rem = e
            for j, xj in enumerate(ctx.independents):
                c = ex.diff(e, xj)
                if not isinstance(c, ex.Rat):
                    raise UnsupportedMapError("x~ must be affine in x with rational "
                                              "coefficients")
                self.A[i][j] = c.value
                rem = ex.add(rem, ex.mul(ex.Rat(-c.value), ex.Sym(xj)))
            if any(s.kind == ex.KIND_INDEPENDENT for s in ex.free_symbols(rem)):
                raise UnsupportedMapError("x~ must be affine in x")
            self.b[i] = rem
        self.Ainv = _invert(self.A)
        self.B = {d: ex.normalize(umap[d]) for d in ctx.dependents}
        for e in self.B.values():
            if any(s.order >= 1 for s in ex.jet_symbols(e)):
                raise UnsupportedMapError("u~ may depend on x and u only")
        self._images = {}

    def _dtilde(self, e, i):
        """Chain-rule derivative along x~_i expressed through the original D_j."""
        parts = []
        for j in range(self.ctx.p):
            c = self.Ainv[j][i]
            if c == 0:
                continue
            parts.append(ex.mul(ex.Rat(c), total_derivative(e, j, self.ctx)))
        return ex.add(*parts) if parts else ex.ZERO

    def jet_image(self, s):
        key = (s.alpha, s.index)
        got = self._images.get(key)
        if got is not None:
            return got
        if mi_order(s.index) == 0:
            val = self.B[self.ctx.dependents[s.alpha]]
        else:
            for i, c in enumerate(s.index):
                if c > 0:
                    below = self.ctx.jet(s.alpha, mi_add(s.index, tuple(
                        -1 if j == i else 0 for j in range(self.ctx.p))))
                    val = self._dtilde(self.jet_image(below), i)
                    break
        self._images[key] = val
        return val


def prolong_discrete(R, e, ctx=None):
    """R* e: substitute x -> A x + b, u -> B, and jets by chain-rule images."""
    ctx = ctx or R.ctx
    rules = {}
    for i, xs in enumerate(ctx.independents):
        image = ex.add(*([ex.mul(ex.Rat(R.A[i][j]), ex.Sym(xj))
                          for j, xj in enumerate(ctx.independents)] + [R.b[i]]))
        rules[xs] = image
    for s in ex.jet_symbols(e):
        rules[s] = R.jet_image(s)
    return ex.substitute(e, rules)


def _invert(A):
    n = len(A)
    M = [row[:] + [Fraction(1) if i == j else Fraction(0) for j in range(n)]
         for i, row in enumerate(A)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if M[r][col] != 0), None)
        if pivot is None:
            raise UnsupportedMapError("map matrix is singular")
        M[col], M[pivot] = M[pivot], M[col]
        pv = M[col][col]
        M[col] = [v / pv for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [v - f * w for v, w in zip(M[r], M[col])]
    return [row[n:] for row in M]
