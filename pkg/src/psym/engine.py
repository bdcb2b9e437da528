"""Symmetry chains on solution manifolds.

A DiffSystem is an ordered set of equations, each rewritten as
solved-coordinate = rhs.  Restriction substitutes solved coordinates and
their total-derivative consequences to a fixed point.  Rules whose leading
coefficient (the "initial") is a rational constant or parameter-only
expression are "clean" and are always applied; rules that divide by
expressions in x, u or function values participate only in the final
zero/termination decision, so recorded chain steps keep their textbook
shape while vanishing is still tested against the full substitution ideal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import expr as ex
from .context import JetContext, mi_ge, mi_sub
from .jet import apply_prolonged, prolong_discrete, total_derivative_mi


class EngineError(Exception):
    pass


class NonTerminatingReductionError(EngineError):
    pass


class UnsolvableStepError(EngineError):
    pass


class DegenerateFieldError(EngineError):
    pass


MAX_REDUCTION_ROUNDS = 64
DEFAULT_MAX_ORDER = 10


@dataclass(frozen=True)
class SideCondition:
    kind: str            # "nonvanishing" | "parameter-constraint" | "dropped-factor"
    expr: ex.Expr
    origin: int = 0      # chain step that introduced it

    def describe(self):
        return f"{self.kind}: {ex.to_str(self.expr)}"


class SolvedEq:
    """One equation rewritten as initial * coord**power = numer.

    Rules with a rational initial substitute exactly; all others reduce by
    pseudo-division (multiply through by the initial), which keeps everything
    polynomial and is sound under the recorded nonvanishing condition.
    """

    def __init__(self, name, coord, power, initial, numer, clean):
        self.name = name
        self.coord = coord
        self.power = power            # 1 for linear rules
        self.initial = initial
        self.numer = numer
        self.clean = clean
        self.exact = isinstance(initial, ex.Rat)
        self.expr = ex.add(ex.mul(initial, ex.pow_(ex.Sym(coord), power)),
                           ex.mul(ex.MINUS_ONE, numer))
        if self.exact:
            rhs = ex.mul(numer, ex.pow_(initial, -1))
            self._images = {(0,) * len(coord.index): rhs}
        else:
            self._cons = {(0,) * len(coord.index): self.expr}

    def covers(self, s):
        """Is jet coordinate s in this rule's derivative cone?"""
        if self.power != 1:
            return s == self.coord
        return s.alpha == self.coord.alpha and mi_ge(s.index, self.coord.index)

    def image(self, s, ctx):
        """Exact rules: replacement D_K(rhs) for the coordinate s = coord + K."""
        k = mi_sub(s.index, self.coord.index)
        got = self._images.get(k)
        if got is None:
            got = total_derivative_mi(self._images[(0,) * len(k)], k, ctx)
            self._images[k] = got
        return got

    def consequence(self, s, ctx):
        """Pseudo rules: the derivative consequence polynomial vanishing on the
        system whose leading coordinate is s (linear in s with separant =
        this rule's initial)."""
        k = mi_sub(s.index, self.coord.index)
        got = self._cons.get(k)
        if got is None:
            got = total_derivative_mi(self.expr, k, ctx)
            self._cons[k] = got
        return got


def _is_param_only(e):
    return all(s.kind in (ex.KIND_PARAMETER, ex.KIND_GROUP_PARAMETER,
                          ex.KIND_ANSATZ_CONSTANT)
               for s in ex.free_symbols(e)) and not ex.ufunc_names(e)


def _jet_rank_key(s):
    """Highest total order first; ties broken by the count of the most
    recently declared independent variable, then earlier ones; then by the
    first-declared dependent."""
    return (s.order, tuple(reversed(s.index)), -s.alpha)


def _strip_content(e):
    """Drop the rational coefficient so recorded conditions read monic-ish."""
    if isinstance(e, ex.Mul):
        non_rat = [f for f in e.factors if not isinstance(f, ex.Rat)]
        if not non_rat:
            return ex.ONE
        return ex.mul(*non_rat)
    if isinstance(e, ex.Rat):
        return ex.ONE
    return e


class DiffSystem:
    """Ordered equations generating a substitution ideal."""

    def __init__(self, ctx: JetContext):
        self.ctx = ctx
        self.eqs: list[SolvedEq] = []
        self.side_conditions: list[SideCondition] = []

    def copy(self):
        out = DiffSystem(self.ctx)
        out.eqs = list(self.eqs)
        out.side_conditions = list(self.side_conditions)
        return out

    def claimed(self, coord):
        for q in self.eqs:
            if q.coord == coord:
                return q
        return None

    def add_equation(self, expr, name=None, solve_for=None, origin=0, _depth=0):
        """Reduce by the clean rules, pick a solved coordinate, and append.

        Returns the new SolvedEq, or None when the equation is redundant.
        """
        if _depth > 16:
            raise UnsolvableStepError("equation solving recursed too deep")
        name = name or f"eq{len(self.eqs)}"
        expr = self.restrict(expr, full=False)
        if expr == ex.ZERO:
            return None
        jets = sorted(ex.jet_symbols(expr), key=_jet_rank_key, reverse=True)
        if not jets:
            raise UnsolvableStepError(f"{name}: no jet coordinate to solve for")
        if solve_for is not None:
            if solve_for not in jets:
                raise UnsolvableStepError(
                    f"{name}: solvefor coordinate {solve_for.name} does not occur")
            candidates = [solve_for]
        else:
            candidates = [jets[0]]
        for coord in candidates:
            attempt = self._try_solve(name, expr, coord, origin)
            if attempt is None:
                continue
            holder = self.claimed(coord)
            if holder is None:
                return self._append(attempt, origin)
            if attempt.clean and not holder.clean:
                # the new rule divides by nothing; it takes over the claim and
                # the displaced equation is re-reduced and re-solved
                self.eqs.remove(holder)
                self._append(attempt, origin)
                self.add_equation(holder.expr, name=holder.name, origin=origin,
                                  _depth=_depth + 1)
                return attempt
            break
        # cannot place on the top coordinate: eliminate it via the full ideal
        reduced = self.restrict(expr, full=True)
        if reduced == ex.ZERO:
            return None
        if reduced != expr:
            if not ex.jet_symbols(reduced):
                raise UnsolvableStepError(
                    f"{name}: reduces to a jet-free expression "
                    f"{ex.to_str(reduced)}")
            return self.add_equation(reduced, name=name, origin=origin,
                                     _depth=_depth + 1)
        # full reduction was a no-op (e.g. a power-claimed coordinate at low
        # power); fall back to lower-ranked coordinates
        for coord in jets[1:]:
            if self.claimed(coord) is not None:
                continue
            attempt = self._try_solve(name, expr, coord, origin)
            if attempt is not None:
                return self._append(attempt, origin)
        raise UnsolvableStepError(
            f"{name}: no solvable leading coordinate in {ex.to_str(expr)}")

    def _try_solve(self, name, expr, coord, origin):
        deg = ex.poly_degree_in(expr, coord)
        if deg is None or deg == 0:
            return None
        initial = ex.coefficient_of(expr, coord, deg)
        if ex.contains_symbol(initial, coord):
            return None
        rest = ex.add(expr, ex.mul(ex.MINUS_ONE, initial,
                                   ex.pow_(ex.Sym(coord), deg)))
        if ex.contains_symbol(rest, coord):
            return None
        numer = ex.mul(ex.MINUS_ONE, rest)
        if deg > 1 and not isinstance(initial, ex.Rat):
            return None  # pure-power rules are supported with constant initials only
        if any(s != coord and s.alpha == coord.alpha and mi_ge(s.index, coord.index)
               for s in ex.jet_symbols(numer) | ex.jet_symbols(initial)):
            return None  # the rest may not live in the solved coordinate's cone
        clean = isinstance(initial, ex.Rat) or _is_param_only(initial)
        return SolvedEq(name, coord, deg, initial, numer, clean)

    def _append(self, eq, origin):
        if not eq.exact:
            self.side_conditions.append(
                SideCondition("nonvanishing", _strip_content(eq.initial), origin))
        self.eqs.append(eq)
        return eq

    # -- restriction ------------------------------------------------------

    def restrict(self, e, full=True):
        """Substitute solved coordinates and their derivative consequences to
        a fixed point.  full=False applies only the clean rules.

        Rules with non-constant initials reduce by pseudo-division, so the
        result may differ from the naive substitution image by a product of
        initials (all recorded as nonvanishing side conditions).
        """
        e = ex.normalize(e)
        rules = [q for q in self.eqs if full or q.clean]
        if not rules:
            return e
        for _ in range(MAX_REDUCTION_ROUNDS):
            changed = False
            subs = {}
            pseudo_target = None
            for s in sorted(ex.jet_symbols(e), key=_jet_rank_key, reverse=True):
                for q in rules:
                    if q.power == 1 and q.covers(s):
                        if q.exact:
                            subs[s] = q.image(s, self.ctx)
                        elif pseudo_target is None:
                            pseudo_target = (s, q)
                        break
            if subs:
                e2 = ex.substitute(e, subs)
                if e2 != e:
                    e, changed = e2, True
            if not changed and pseudo_target is not None:
                s, q = pseudo_target
                e2 = _pseudo_reduce(e, s, q.consequence(s, self.ctx))
                if e2 is not None and e2 != e:
                    e, changed = e2, True
            for q in rules:
                if q.power > 1:
                    e2 = ex.replace_power(e, q.coord, q.power,
                                          q.image(q.coord, self.ctx))
                    if e2 != e:
                        e, changed = e2, True
            if not changed:
                return e
        raise NonTerminatingReductionError(
            f"restriction did not reach a fixed point in {MAX_REDUCTION_ROUNDS} rounds")


def _pseudo_reduce(e, s, cons):
    """Pseudo-remainder of e by the consequence polynomial cons, linear in the
    jet coordinate s: with cons = I*s + R, maps sum A_j s^j to
    sum A_j (-R)^j I^(d-j).  Returns None when e is not polynomial in s."""
    d = ex.poly_degree_in(e, s)
    if d is None:
        return None
    if d == 0:
        return e
    sep = ex.coefficient_of(cons, s, 1)
    rest = ex.add(cons, ex.mul(ex.MINUS_ONE, sep, ex.Sym(s)))
    if ex.contains_symbol(sep, s) or ex.contains_symbol(rest, s):
        return None
    parts = []
    for j in range(d + 1):
        aj = ex.coefficient_of(e, s, j)
        if aj == ex.ZERO:
            continue
        parts.append(ex.mul(aj, ex.pow_(ex.mul(ex.MINUS_ONE, rest), j),
                            ex.pow_(sep, d - j)))
    return ex.add(*parts)


def build_system(ctx, equations):
    """equations: iterable of (name, expr, solve_for_or_None)."""
    sys = DiffSystem(ctx)
    for name, e, solve_for in equations:
        sys.add_equation(ex.normalize(e), name=name, solve_for=solve_for)
    return sys


# ---------------------------------------------------------------------------
# assumptions and the factor-drop policy


class Assumptions:
    """Nonvanishing declarations and parameter substitutions."""

    def __init__(self, nonzero=(), param_subst=None):
        self.nonzero = []
        for e in nonzero:
            e = ex.normalize(e)
            if e not in self.nonzero:
                self.nonzero.append(e)
            for f in ex.factor_split(e):
                base, _ = ex._base_exp(f)
                if base not in self.nonzero:
                    self.nonzero.append(base)
        self.param_subst = dict(param_subst or {})

    def allows_drop(self, base):
        return base in self.nonzero

    def apply(self, e):
        if not self.param_subst:
            return ex.normalize(e)
        return ex.substitute(e, self.param_subst)


def drop_factors(e, assumptions, side, r):
    """Remove numeric content and declared-nonzero factors from a chain step,
    recording each drop."""
    if not isinstance(e, ex.Mul):
        return e
    kept = []
    for f in e.factors:
        if isinstance(f, ex.Rat):
            continue  # numeric content is always dropped
        base, _ = ex._base_exp(f)
        if assumptions.allows_drop(base):
            side.append(SideCondition("dropped-factor", base, r))
            continue
        kept.append(f)
    if not kept:
        return ex.ONE
    return ex.mul(*kept)


# ---------------------------------------------------------------------------
# chain machinery


@dataclass
class ChainStep:
    r: int
    raw: tuple           # one Expr per system component
    restricted: tuple    # recorded (clean-restricted, factor-dropped) forms
    appended: bool


@dataclass
class ChainResult:
    steps: list
    status: str                    # exact | partial | inconsistent | inconclusive
    order: Optional[int]
    side_conditions: list
    system: DiffSystem
    inconsistent_at: Optional[int] = None

    def restricted_sequence(self, component=0):
        return [s.restricted[component] for s in self.steps]


def _classify_jet_free(e):
    """A nonzero jet-free step: a parameter constraint if parameters or
    function values occur, otherwise inconsistency (an expression in the
    independents alone can never vanish identically)."""
    syms = ex.free_symbols(e)
    if any(s.kind in (ex.KIND_PARAMETER, ex.KIND_ANSATZ_CONSTANT,
                      ex.KIND_GROUP_PARAMETER) for s in syms) or ex.ufunc_names(e):
        return "parameter"
    return "inconsistent"


def _solve_parameter_constraint(e):
    """Solve a parameter-only expression = 0 for one linearly occurring
    parameter with rational coefficient."""
    for s in sorted(ex.free_symbols(e)):
        if s.kind != ex.KIND_PARAMETER:
            continue
        if ex.poly_degree_in(e, s) == 1:
            c = ex.coefficient_of(e, s, 1)
            if isinstance(c, ex.Rat):
                rest = ex.add(e, ex.mul(ex.MINUS_ONE, c, ex.Sym(s)))
                return s, ex.mul(ex.MINUS_ONE, rest, ex.pow_(c, -1))
    return None, None


def _substitute_params(sys, subst):
    """Rebuild a system under a parameter substitution."""
    out = DiffSystem(sys.ctx)
    out.side_conditions = sys.side_conditions
    for q in sys.eqs:
        e2 = ex.substitute(q.expr, subst)
        if e2 == ex.ZERO:
            continue
        solve_for = q.coord if ex.contains_symbol(e2, q.coord) else None
        out.add_equation(e2, name=q.name, solve_for=solve_for)
    return out


def _run_chain(step_op, system, assumptions, max_order, strong, solve_hints):
    sys = system.copy()
    side = sys.side_conditions
    steps = []
    nonzero_steps = 0
    operand = [eq.expr for eq in system.eqs]
    for r in range(1, max_order + 1):
        raws = [step_op(e) if e != ex.ZERO else ex.ZERO for e in operand]
        if strong:
            recorded = [ex.normalize(e) for e in raws]
        else:
            recorded = [sys.restrict(e, full=False) for e in raws]
        recorded = [drop_factors(e, assumptions, side, r) for e in recorded]
        # decide each component against the full ideal
        decided = []
        for e in recorded:
            if e == ex.ZERO:
                decided.append(ex.ZERO)
                continue
            full = e if strong else sys.restrict(e, full=True)
            decided.append(ex.ZERO if full == ex.ZERO else full)
        # parameter constraints and inconsistency from jet-free components
        for k, full in enumerate(decided):
            if full == ex.ZERO or ex.jet_symbols(full):
                continue
            if _classify_jet_free(full) == "inconsistent":
                steps.append(ChainStep(r, tuple(raws), tuple(recorded), False))
                return ChainResult(steps, "inconsistent", None, side, sys,
                                   inconsistent_at=r)
            constraint = _strip_content(full)
            side.append(SideCondition("parameter-constraint", constraint, r))
            p, val = _solve_parameter_constraint(full)
            if p is not None:
                subst = {p: val}
                assumptions.param_subst[p] = val
                sys = _substitute_params(sys, subst)
                side = sys.side_conditions
                operand = [ex.substitute(e, subst) for e in operand]
                recorded = [ex.substitute(e, subst) for e in recorded]
                decided = [ex.ZERO if i == k else ex.substitute(e, subst)
                           for i, e in enumerate(decided)]
            else:
                decided[k] = ex.ZERO
        if all(e == ex.ZERO for e in decided):
            zeros = tuple(ex.ZERO for _ in raws)
            steps.append(ChainStep(r, tuple(raws), zeros, False))
            status = "exact" if nonzero_steps == 0 else "partial"
            return ChainResult(steps, status, nonzero_steps, side, sys)
        nonzero_steps += 1
        steps.append(ChainStep(r, tuple(raws), tuple(recorded), not strong))
        next_operand = []
        for k, e in enumerate(recorded):
            if decided[k] == ex.ZERO:
                next_operand.append(ex.ZERO)
                continue
            if not strong:
                hint = (solve_hints or {}).get(r)
                sys.add_equation(e, name=f"chain{r}" + (f"_{k}" if len(recorded) > 1
                                                        else ""),
                                 solve_for=hint, origin=r)
            next_operand.append(e)
        operand = next_operand
    return ChainResult(steps, "inconclusive", None, side, sys)


def partial_chain(X, system, assumptions=None, max_order=DEFAULT_MAX_ORDER,
                  strong=False, solve_hints=None):
    assumptions = assumptions or Assumptions()
    ctx = system.ctx
    return _run_chain(lambda e: apply_prolonged(X, e, ctx), system, assumptions,
                      max_order, strong, solve_hints)


def discrete_chain(R, system, assumptions=None, max_order=DEFAULT_MAX_ORDER,
                   solve_hints=None):
    assumptions = assumptions or Assumptions()
    ctx = system.ctx
    cap = min(max_order, R.period + 1) if R.period else max_order
    return _run_chain(lambda e: prolong_discrete(R, e, ctx), system, assumptions,
                      cap, False, solve_hints)


def exact_symmetry_check(X, system, **iszero_opts):
    """is_zero of X* Delta_k restricted to the solution manifold, aggregated
    to the worst component verdict."""
    rank = {ex.ZeroStatus.SYMBOLIC: 0, ex.ZeroStatus.NUMERIC: 1,
            ex.ZeroStatus.UNKNOWN: 2, ex.ZeroStatus.NONZERO: 3}
    worst = ex.ZeroStatus(ex.ZeroStatus.SYMBOLIC)
    for eq in system.eqs:
        e = system.restrict(apply_prolonged(X, eq.expr, system.ctx), full=True)
        st = ex.is_zero(e, **iszero_opts)
        if rank[st.verdict] > rank[worst.verdict]:
            worst = st
    return worst


def conditional_system(X, system):
    """Adjoin the invariant-surface conditions phi_a - xi_i u_{a,i} = 0."""
    if X.is_trivial():
        raise DegenerateFieldError("all xi and phi vanish identically")
    out = system.copy()
    for dep in system.ctx.dependents:
        q = X.characteristic(dep)
        if q == ex.ZERO:
            continue
        out.add_equation(q, name=f"invariance_{dep.name}")
    return out


def frechet_apply(phis, system):
    """Frechet derivative of each equation applied to x-dependent phi_a.

    Computed directly from the partials d(Delta)/d(u_{a,J}) so it is an
    independent route from the prolongation machinery.
    """
    ctx = system.ctx
    for phi in phis.values():
        for s in ex.free_symbols(phi):
            if s.kind == ex.KIND_DEPENDENT:
                raise EngineError("superposition characteristics may depend on "
                                  "the independent variables only")
    out = []
    for eq in system.eqs:
        parts = []
        for s in sorted(ex.jet_symbols(eq.expr)):
            d = ex.diff(eq.expr, s)
            if d == ex.ZERO:
                continue
            dphi = phis.get(ctx.dependents[s.alpha], ex.ZERO)
            for i, cnt in enumerate(s.index):
                for _ in range(cnt):
                    dphi = ex.diff(dphi, ctx.independents[i])
            if dphi == ex.ZERO:
                continue
            parts.append(ex.mul(d, dphi))
        out.append(ex.add(*parts) if parts else ex.ZERO)
    return out


@dataclass
class DynSys:
    """Autonomous u' = f(u)."""
    ctx: JetContext
    rhs: dict              # dependent base Symbol -> Expr over dependents

    def __post_init__(self):
        for e in self.rhs.values():
            for s in ex.free_symbols(e):
                if s.kind == ex.KIND_INDEPENDENT or (s.is_jet() and s.order >= 1):
                    raise EngineError("dynamical-system right-hand sides must be "
                                      "autonomous expressions over the dependents")

    @property
    def deps(self):
        return self.ctx.dependents


def ds_commutator(F: DynSys, phis):
    """psi_a = f_b dphi_a/du_b - phi_b df_a/du_b; zero iff phi generates a
    time-independent symmetry of u' = f(u)."""
    out = []
    for dep in F.deps:
        parts = []
        for b in F.deps:
            parts.append(ex.mul(F.rhs[b], ex.diff(phis[dep], b)))
            parts.append(ex.mul(ex.MINUS_ONE, phis[b], ex.diff(F.rhs[dep], b)))
        out.append(ex.add(*parts))
    return out


def exp_series_terms(X, system, k):
    """Unrestricted iterates (X*)^r Delta for r = 1..k, one list per r."""
    ctx = system.ctx
    out = []
    current = [eq.expr for eq in system.eqs]
    for _ in range(k):
        current = [apply_prolonged(X, e, ctx) for e in current]
        out.append(list(current))
    return out
