"""Numeric and symbolic verification of solution families, orbits, and
dynamical-system symmetry conditions."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import expr as ex
from .engine import DiffSystem, DynSys
from .jet import VectorField


class VerifyError(Exception):
    pass


class BlowUpError(VerifyError):
    def __init__(self, t):
        super().__init__(f"state became non-finite at t = {t}")
        self.t = t


DEFAULT_BOX = (0.25, 1.75)
CONSTANT_BOX = (0.1, 2.0)


@dataclass
class Ansatz:
    """A parametrized solution family u_a = U_a(x; constants; lambda)."""
    name: str
    exprs: dict                      # dependent base Symbol -> Expr
    constants: tuple = ()
    has_lambda: bool = False
    domain: Optional[dict] = None    # independent Symbol -> (lo, hi)

    def __post_init__(self):
        for e in self.exprs.values():
            if ex.jet_symbols(e) - set(self.exprs):
                raise VerifyError("ansatz expressions must not contain jet coordinates")


@dataclass
class VerifyVerdict:
    statuses: list                   # one ZeroStatus per equation
    max_residual: float
    samples: int
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(s.is_zero() for s in self.statuses)

    @property
    def symbolic(self):
        return all(s.verdict == ex.ZeroStatus.SYMBOLIC for s in self.statuses)


def family_substitution(ansatz, ctx, exprs):
    """Symbol->Expr map sending each jet coordinate occurring in exprs to the
    corresponding symbol-wise derivative of the family."""
    needed = set()
    for e in exprs:
        needed |= ex.jet_symbols(e)
    rules = {}
    for s in needed:
        dep = ctx.dependents[s.alpha]
        if dep not in ansatz.exprs:
            raise VerifyError(f"ansatz does not define {dep.name}")
        u = ansatz.exprs[dep]
        for i, cnt in enumerate(s.index):
            for _ in range(cnt):
                u = ex.diff(u, ctx.independents[i])
        rules[s] = u
    for dep, u in ansatz.exprs.items():
        rules.setdefault(dep, u)
    return rules


def _sample_boxes(ansatz, ctx, syms):
    boxes = {}
    for s in syms:
        if ansatz.domain and s in ansatz.domain:
            boxes[s] = ansatz.domain[s]
        elif s.kind == ex.KIND_INDEPENDENT:
            boxes[s] = DEFAULT_BOX
    return boxes


def _numeric_verdict(residuals, rng, boxes, tol):
    statuses = []
    max_res = 0.0
    for e in residuals:
        st = ex.is_zero(e, tol=tol, rng=rng, boxes=boxes)
        statuses.append(st)
        max_res = max(max_res, st.max_abs)
    return statuses, max_res


def verify_ansatz(ansatz, system: DiffSystem, tol=ex.DEFAULT_TOL, rng=None):
    """Substitute the family into every equation; symbolic residual first,
    numeric sampling as a fallback."""
    ctx = system.ctx
    exprs = [q.expr for q in system.eqs]
    rules = family_substitution(ansatz, ctx, exprs)
    residuals = [ex.substitute(e, rules) for e in exprs]
    if all(ex.symbolically_zero(r) for r in residuals):
        return VerifyVerdict([ex.ZeroStatus(ex.ZeroStatus.SYMBOLIC)] * len(residuals),
                             0.0, 0)
    rng = rng or random.Random(0)
    boxes = _sample_boxes(ansatz, ctx, set().union(*[ex.free_symbols(r)
                                                     for r in residuals]))
    statuses, max_res = _numeric_verdict(residuals, rng, boxes, tol)
    return VerifyVerdict(statuses, max_res, ex.DEFAULT_SAMPLES)


def orbit_residuals(ansatz, X: VectorField):
    """dU/dlambda - (phi(x,U) - xi_i dU/dx_i) evaluated on the family."""
    if not ansatz.has_lambda:
        raise VerifyError("orbit verification needs a family with the group "
                          "parameter lambda")
    ctx = X.ctx
    out = []
    base_rules = {dep: u for dep, u in ansatz.exprs.items()}
    for dep, u in ansatz.exprs.items():
        r = ex.diff(u, ctx.lam)
        phi = ex.substitute(X.phi[dep], base_rules)
        r = ex.add(r, ex.mul(ex.MINUS_ONE, phi))
        for i, xs in enumerate(ctx.independents):
            xi = ex.substitute(X.xi[xs], base_rules)
            if xi == ex.ZERO:
                continue
            r = ex.add(r, ex.mul(xi, ex.diff(u, xs)))
        out.append(r)
    return out


def verify_orbit_ode(ansatz, X: VectorField, tol=ex.DEFAULT_TOL, rng=None):
    residuals = orbit_residuals(ansatz, X)
    if all(ex.symbolically_zero(r) for r in residuals):
        return VerifyVerdict([ex.ZeroStatus(ex.ZeroStatus.SYMBOLIC)] * len(residuals),
                             0.0, 0)
    rng = rng or random.Random(0)
    boxes = _sample_boxes(ansatz, X.ctx, set().union(*[ex.free_symbols(r)
                                                       for r in residuals]))
    statuses, max_res = _numeric_verdict(residuals, rng, boxes, tol)
    return VerifyVerdict(statuses, max_res, ex.DEFAULT_SAMPLES)


# ---------------------------------------------------------------------------
# compiled evaluation


def compile_exprs(exprs, symbols):
    """Compile expressions to a fast callable of positional float arguments."""
    names = {}
    for i, s in enumerate(symbols):
        names[s] = f"_v{i}"

    def emit(e):
        if isinstance(e, ex.Rat):
            v = e.value
            return f"({v.numerator}/{v.denominator})" if v.denominator != 1 \
                else f"({v.numerator})"
        if isinstance(e, ex.Sym):
            try:
                return names[e.sym]
            except KeyError:
                raise VerifyError(f"unbound symbol {e.sym.name} in compiled "
                                  "expression")
        if isinstance(e, ex.Add):
            return "(" + " + ".join(emit(t) for t in e.terms) + ")"
        if isinstance(e, ex.Mul):
            return "(" + " * ".join(emit(f) for f in e.factors) + ")"
        if isinstance(e, ex.Pow):
            q = e.exp
            if q.denominator == 1:
                return f"({emit(e.base)} ** ({q.numerator}))"
            return f"({emit(e.base)} ** ({q.numerator}/{q.denominator}))"
        if isinstance(e, ex.Fun):
            fn = {"sech": "(1.0/_math.cosh(%s))"}.get(e.name)
            if fn:
                return fn % emit(e.arg)
            return f"_math.{e.name}({emit(e.arg)})"
        raise VerifyError("cannot compile uninterpreted functions; supply "
                          "concrete choices in the problem file")

    body = "[" + ", ".join(emit(e) for e in exprs) + "]"
    args = ", ".join(names[s] for s in symbols)
    src = f"def _compiled({args}):\n    return {body}\n"
    ns = {"_math": math}
    exec(src, ns)
    return ns["_compiled"]


# ---------------------------------------------------------------------------
# dynamical systems: RK4, variational equation


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray               # shape (N+1, n)
    method: str
    step: float

    def state_at(self, k):
        return self.states[k]


def integrate_ds(F: DynSys, u0, t_span, h):
    """Classical fixed-step RK4 for u' = f(u)."""
    if h <= 0:
        raise VerifyError("step size must be positive")
    f = compile_exprs([F.rhs[d] for d in F.deps], list(F.deps))
    t0, t1 = t_span
    n_steps = int(round((t1 - t0) / h))
    times = t0 + h * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, len(F.deps)))
    u = np.asarray([float(v) for v in u0], dtype=float)
    states[0] = u
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            u = _rk4_step(lambda y: np.asarray(f(*y)), u, h)
            if not np.all(np.isfinite(u)):
                raise BlowUpError(times[k])
            states[k + 1] = u
    return Trajectory(times, states, "rk4", h)


def _rk4_step(f, u, h):
    k1 = f(u)
    k2 = f(u + 0.5 * h * k1)
    k3 = f(u + 0.5 * h * k2)
    k4 = f(u + h * k3)
    return u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def variational_check(F: DynSys, phis, u0, t_span, h=1e-3, tol=1e-6,
                      tangent="field"):
    """Co-integrate u' = f(u), v' = (grad f)(u) v and compare v(t) against
    phi(u(t)) along the trajectory.

    tangent="field" starts v at phi(u0) (the group tangent du/dlambda);
    tangent="flow" starts at f(u0) and compares against f(u(t)).
    """
    deps = list(F.deps)
    n = len(deps)
    f = compile_exprs([F.rhs[d] for d in deps], deps)
    jac_exprs = [ex.diff(F.rhs[a], b) for a in deps for b in deps]
    jac = compile_exprs(jac_exprs, deps)
    if tangent == "flow":
        target_exprs = [F.rhs[d] for d in deps]
    else:
        target_exprs = [phis[d] for d in deps]
    target = compile_exprs(target_exprs, deps)

    def rhs(y):
        u, v = y[:n], y[n:]
        fu = np.asarray(f(*u))
        L = np.asarray(jac(*u)).reshape(n, n)
        return np.concatenate([fu, L @ v])

    t0, t1 = t_span
    u = np.asarray([float(v) for v in u0], dtype=float)
    v = np.asarray(target(*u))
    y = np.concatenate([u, v])
    n_steps = int(round((t1 - t0) / h))
    max_err = 0.0
    for k in range(n_steps):
        y = _rk4_step(rhs, y, h)
        if not np.all(np.isfinite(y)):
            raise BlowUpError(t0 + (k + 1) * h)
        err = float(np.max(np.abs(y[n:] - np.asarray(target(*y[:n])))))
        max_err = max(max_err, err)
    status = ex.ZeroStatus(ex.ZeroStatus.NUMERIC if max_err <= tol
                           else ex.ZeroStatus.NONZERO, max_abs=max_err)
    return VerifyVerdict([status], max_err, n_steps,
                         notes=[f"tangent={tangent}", f"tol={tol}"])


def flow_states(X: VectorField, states, lam, substeps=64):
    """Push dependent-variable states along du/dlambda = phi(u) (fields with
    xi = 0, the dynamical-system case)."""
    ctx = X.ctx
    if any(e != ex.ZERO for e in X.xi.values()):
        raise VerifyError("flow_states applies to fields with xi = 0")
    phi = compile_exprs([X.phi[d] for d in ctx.dependents], list(ctx.dependents))
    out = np.asarray(states, dtype=float).copy()
    h = lam / substeps
    for _ in range(substeps):
        for i in range(out.shape[0]):
            out[i] = _rk4_step(lambda y: np.asarray(phi(*y)), out[i], h)
    return out


# ---------------------------------------------------------------------------
# gridded solutions: finite transforms and finite-difference residuals


@dataclass
class GridSample:
    """A sampled function of two independent variables on a regular grid."""
    axes: tuple                      # (x-axis values, y-axis values)
    values: np.ndarray               # shape (len(axes[0]), len(axes[1]))


def sample_ansatz(ansatz, ctx, axes, bindings=None):
    """Evaluate a one-dependent family on a regular grid."""
    dep = ctx.dependents[0]
    u = ansatz.exprs[dep]
    if bindings:
        u = ex.substitute(u, {s: ex.Rat(Fraction(v).limit_denominator(10**12))
                              if not isinstance(v, ex.Expr) else v
                              for s, v in bindings.items()})
    xs, ys = ctx.independents[0], ctx.independents[1]
    fn = compile_exprs([u], [xs, ys])
    ax, ay = axes
    vals = np.empty((len(ax), len(ay)))
    for i, a in enumerate(ax):
        for j, b in enumerate(ay):
            vals[i, j] = fn(a, b)[0]
    return GridSample((np.asarray(ax, dtype=float), np.asarray(ay, dtype=float)), vals)


def finite_transform(X: VectorField, sample: GridSample, lam, ctx=None,
                     substeps=None, lam_bound=1.0):
    """Push the graph of a gridded solution through exp(lam X) and
    re-interpolate onto the original grid.

    Integrates d(x, u)/dlambda = (xi, phi) from every node with fixed-substep
    RK4 (the step count doubles until two resolutions agree), then rebuilds a
    function of x with cubic interpolation.  Nodes leaving the convex hull
    are reported as a clipped region (NaN mask), not a failure.
    """
    from scipy.interpolate import griddata

    ctx = ctx or X.ctx
    if abs(lam) > lam_bound:
        raise VerifyError(f"|lambda| = {abs(lam)} exceeds the local-group bound "
                          f"{lam_bound}")
    if ctx.p != 2:
        raise VerifyError("finite_transform expects two independent variables")
    xs, ys = ctx.independents
    dep = ctx.dependents[0]
    syms = [xs, ys, dep]
    vf = compile_exprs([X.xi[xs], X.xi[ys], X.phi[dep]], syms)

    def rhs(state):
        return np.asarray(vf(*state))

    ax, ay = sample.axes
    pts = np.array([[a, b, sample.values[i, j]]
                    for i, a in enumerate(ax) for j, b in enumerate(ay)])

    def run(nsub):
        out = pts.copy()
        h = lam / nsub
        for _ in range(nsub):
            out = np.array([_rk4_step(rhs, row, h) for row in out])
        return out

    nsub = substeps or 16
    pushed = run(nsub)
    if substeps is None:
        refined = run(2 * nsub)
        while np.max(np.abs(refined - pushed)) > 1e-10 and nsub < 256:
            nsub *= 2
            pushed = refined
            refined = run(2 * nsub)
        pushed = refined
    grid_x, grid_y = np.meshgrid(ax, ay, indexing="ij")
    vals = griddata(pushed[:, :2], pushed[:, 2], (grid_x, grid_y), method="cubic")
    return GridSample(sample.axes, vals)


# fourth-order central stencils, offsets/h**order
_STENCILS = {
    0: ([0], [1.0]),
    1: ([-2, -1, 1, 2], [1 / 12, -2 / 3, 2 / 3, -1 / 12]),
    2: ([-2, -1, 0, 1, 2], [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]),
    3: ([-3, -2, -1, 1, 2, 3], [1 / 8, -1.0, 13 / 8, -13 / 8, 1.0, -1 / 8]),
    4: ([-3, -2, -1, 0, 1, 2, 3], [-1 / 6, 2.0, -13 / 2, 28 / 3, -13 / 2, 2.0, -1 / 6]),
}


def _fd_axis(values, order, h, axis):
    if order == 0:
        return values
    offsets, weights = _STENCILS[order]
    m = max(abs(o) for o in offsets)
    out = np.full_like(values, np.nan)
    core = [slice(m, values.shape[0] - m), slice(m, values.shape[1] - m)]
    acc = np.zeros_like(values[tuple(core)])
    for o, w in zip(offsets, weights):
        sl = list(core)
        sl[axis] = slice(m + o, values.shape[axis] - m + o)
        acc = acc + w * values[tuple(sl)]
    out[tuple(core)] = acc / h ** order
    return out


def residual_on_grid(sample: GridSample, system: DiffSystem, bindings=None):
    """Max |equation residual| over interior nodes, using 4th-order central
    finite-difference stencils for every jet coordinate."""
    ctx = system.ctx
    if ctx.p != 2:
        raise VerifyError("residual_on_grid expects two independent variables")
    ax, ay = sample.axes
    if len(ax) < 7 or len(ay) < 7:
        raise VerifyError("grid too coarse for 4th-order stencils "
                          "(need >= 7 nodes per axis)")
    hx = float(ax[1] - ax[0])
    hy = float(ay[1] - ay[0])
    jets = {}
    max_order = 0
    for q in system.eqs:
        for s in ex.jet_symbols(q.expr):
            jets[s] = None
            max_order = max(max_order, max(s.index))
    if max_order > 4:
        raise VerifyError("stencils go up to 4th derivatives")
    for s in jets:
        v = _fd_axis(sample.values, s.index[0], hx, 0)
        v = _fd_axis(v, s.index[1], hy, 1)
        jets[s] = v
    grid_x, grid_y = np.meshgrid(ax, ay, indexing="ij")
    env = {ctx.independents[0]: grid_x, ctx.independents[1]: grid_y,
           ctx.dependents[0]: sample.values}
    env.update(jets)
    if bindings:
        env.update({s: float(v) for s, v in bindings.items()})
    worst = 0.0
    for q in system.eqs:
        res = _eval_grid(q.expr, env)
        res = np.asarray(res)
        good = np.isfinite(res)
        if not good.any():
            raise VerifyError("no interior nodes left after stenciling")
        worst = max(worst, float(np.max(np.abs(res[good]))))
    return worst


def _eval_grid(e, env):
    if isinstance(e, ex.Rat):
        return float(e.value)
    if isinstance(e, ex.Sym):
        return env[e.sym]
    if isinstance(e, ex.Add):
        return sum(_eval_grid(t, env) for t in e.terms)
    if isinstance(e, ex.Mul):
        out = 1.0
        for f in e.factors:
            out = out * _eval_grid(f, env)
        return out
    if isinstance(e, ex.Pow):
        return _eval_grid(e.base, env) ** float(e.exp)
    if isinstance(e, ex.Fun):
        a = _eval_grid(e.arg, env)
        np_fun = {"exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos,
                  "tan": np.tan, "sinh": np.sinh, "cosh": np.cosh,
                  "tanh": np.tanh, "sech": lambda v: 1.0 / np.cosh(v)}
        return np_fun[e.name](a)
    raise VerifyError("grid evaluation needs concrete functions; supply "
                      "realizations for uninterpreted symbols")
