"""Batch front end: run problem files, evaluate expectations, emit reports.

Exit codes: 0 when every task reaches a definite verdict and all expectations
hold, 1 on an expectation mismatch or an indefinite verdict, 2 on errors.
"""

from __future__ import annotations

import argparse
import random
import sys
from fractions import Fraction
from pathlib import Path

from . import expr as ex
from .engine import (Assumptions, DiffSystem, DynSys, EngineError,
                     conditional_system, discrete_chain, ds_commutator,
                     exact_symmetry_check, exp_series_terms, frechet_apply,
                     partial_chain)
from .jet import FieldError, UnsupportedMapError, VectorField
from .parser import ParseError, ProblemSpec, parse_problem
from .report import chain_result_dict, emit_pretty, emit_report
from .verify import (VerifyError, family_substitution, variational_check,
                     verify_ansatz, verify_orbit_ode)

INDEFINITE = ("inconclusive", "unknown")


class TaskError(Exception):
    pass


def _apply_field(field, asm):
    return VectorField(field.ctx,
                       xi={s: asm.apply(e) for s, e in field.xi.items()},
                       phi={s: asm.apply(e) for s, e in field.phi.items()},
                       kind=field.kind, name=field.name)


def _named(table, name, what):
    if name is None:
        raise TaskError(f"task needs a {what}")
    try:
        return table[name]
    except KeyError:
        raise TaskError(f"unknown {what} {name!r}")


class Runner:
    def __init__(self, spec: ProblemSpec, max_order=None, strong=False,
                 tol=None, seed=0):
        self.spec = spec
        self.asm = spec.assumptions
        self.max_order = max_order
        self.strong = strong
        self.tol = tol
        self.seed = seed
        self.last_chain = None

    def base_system(self):
        sys_ = DiffSystem(self.spec.ctx)
        for eqn in self.spec.equations:
            sys_.add_equation(self.asm.apply(eqn.expr), name=eqn.name,
                              solve_for=eqn.solve_for)
        return sys_

    def dynsys(self):
        """Interpret the equations as an autonomous first-order system."""
        ctx = self.spec.ctx
        if ctx.p != 1:
            raise TaskError("dynamical-system tasks need one independent variable")
        rhs = {}
        for eqn in self.spec.equations:
            e = self.asm.apply(eqn.expr)
            for dep in ctx.dependents:
                dot = ctx.jet(dep, (1,))
                if ex.contains_symbol(e, dot):
                    coeff = ex.coefficient_of(e, dot, 1)
                    if coeff != ex.ONE:
                        raise TaskError(f"equation {eqn.name} is not in the "
                                        "form Dt(u) - f(u) = 0")
                    f = ex.mul(ex.MINUS_ONE,
                               ex.add(e, ex.mul(ex.MINUS_ONE, ex.Sym(dot))))
                    rhs[dep] = f
                    break
            else:
                raise TaskError(f"equation {eqn.name} has no first-order "
                                "time derivative")
        missing = [d.name for d in ctx.dependents if d not in rhs]
        if missing:
            raise TaskError(f"no evolution equation for {', '.join(missing)}")
        return DynSys(ctx, rhs)

    def rng(self, i):
        return random.Random(self.seed * 1_000_003 + i)

    def run_tasks(self):
        results = []
        errors = False
        for i, task in enumerate(self.spec.tasks):
            res = {"task": task.kind.replace("_", "-")}
            for key in ("field", "map", "ansatz"):
                if key in task.options:
                    res[key] = task.options[key]
            try:
                handler = getattr(self, "task_" + task.kind)
                handler(task, res, i)
            except (TaskError, EngineError, VerifyError, FieldError,
                    UnsupportedMapError, ex.ExprError) as err:
                res["error"] = str(err)
                errors = True
            res["expectations"] = [self._check_expectation(e, res)
                                   for e in task.expectations]
            results.append(res)
        return results, errors

    # -- task handlers ------------------------------------------------------

    def _chain_opts(self, task):
        opts = {}
        mo = task.options.get("max_order")
        if mo is not None:
            opts["max_order"] = _as_int(mo)
        if self.max_order is not None:
            opts["max_order"] = self.max_order
        return opts

    def task_chain(self, task, res, i):
        X = _apply_field(_named(self.spec.fields, task.options.get("field"),
                                "vector field"), self.asm)
        strong = bool(task.options.get("strong", False)) or self.strong
        result = partial_chain(X, self.base_system(), self._fresh_asm(),
                               strong=strong, **self._chain_opts(task))
        res.update(chain_result_dict(result))
        self.last_chain = result

    def task_discrete_chain(self, task, res, i):
        R = _named(self.spec.maps, task.options.get("map"), "discrete map")
        result = discrete_chain(R, self.base_system(), self._fresh_asm(),
                                **self._chain_opts(task))
        res.update(chain_result_dict(result))
        self.last_chain = result

    def task_exact(self, task, res, i):
        X = _apply_field(_named(self.spec.fields, task.options.get("field"),
                                "vector field"), self.asm)
        st = exact_symmetry_check(X, self.base_system(), rng=self.rng(i),
                                  **({"tol": self.tol} if self.tol else {}))
        res["verdict"] = st.verdict
        if st.verdict in (ex.ZeroStatus.SYMBOLIC, ex.ZeroStatus.NUMERIC):
            res["status"] = "exact"
        elif st.verdict == ex.ZeroStatus.NONZERO:
            res["status"] = "not-exact"
            res["witness"] = st.witness
        else:
            res["status"] = "unknown"

    def task_conditional(self, task, res, i):
        X = _apply_field(_named(self.spec.fields, task.options.get("field"),
                                "vector field"), self.asm)
        sys_ = conditional_system(X, self.base_system())
        res["status"] = "ok"
        res["equations"] = [{"name": q.name, "expr": ex.to_str(q.expr),
                             "solved": q.coord.name} for q in sys_.eqs]

    def task_frechet(self, task, res, i):
        X = _apply_field(_named(self.spec.fields, task.options.get("field"),
                                "vector field"), self.asm)
        if any(e != ex.ZERO for e in X.xi.values()):
            raise TaskError("frechet tasks need a field with xi = 0")
        out = frechet_apply(dict(X.phi), self.base_system())
        res["status"] = "ok"
        res["expressions"] = [ex.to_str(e) for e in out]

    def task_ds_commutator(self, task, res, i):
        X = _apply_field(_named(self.spec.fields, task.options.get("field"),
                                "vector field"), self.asm)
        F = self.dynsys()
        psi = ds_commutator(F, {d: X.phi[d] for d in F.deps})
        res["components"] = []
        for dep, p in zip(F.deps, psi):
            res["components"].append({
                "dot": dep.name,
                "psi": ex.to_str(p),
                "factors": [ex.to_str(f) for f in ex.factor_split(p)],
            })
        res["status"] = "zero" if all(p == ex.ZERO for p in psi) else "nonzero"

    def task_verify(self, task, res, i):
        a = _named(self.spec.ansatze, task.options.get("ansatz"), "ansatz")
        a = self._applied_ansatz(a)
        if task.options.get("with_chain"):
            if self.last_chain is None:
                raise TaskError("with_chain needs a preceding chain task")
            system = self.last_chain.system
        else:
            system = self.base_system()
        v = verify_ansatz(a, system, rng=self.rng(i),
                          **({"tol": self.tol} if self.tol else {}))
        self._verdict(res, v)

    def task_orbit(self, task, res, i):
        a = self._applied_ansatz(_named(self.spec.ansatze,
                                        task.options.get("ansatz"), "ansatz"))
        X = _apply_field(_named(self.spec.fields, task.options.get("field"),
                                "vector field"), self.asm)
        v = verify_orbit_ode(a, X, rng=self.rng(i),
                             **({"tol": self.tol} if self.tol else {}))
        self._verdict(res, v)

    def task_variational(self, task, res, i):
        X = _apply_field(_named(self.spec.fields, task.options.get("field"),
                                "vector field"), self.asm)
        F = self.dynsys()
        u0 = [_as_float(v) for v in task.options.get("start", ())]
        if len(u0) != len(F.deps):
            raise TaskError("start=(...) must give one value per dependent "
                            "variable")
        tspan = task.options.get("tspan")
        if tspan is None:
            tspan = (0.0, 10.0)
        else:
            tspan = tuple(_as_float(v) for v in tspan)
        h = _as_float(task.options.get("h", ex.Rat(Fraction(1, 1000))))
        tol = _as_float(task.options.get("tol", ex.Rat(Fraction(1, 10**6))))
        tangents = {"field": ("field",), "flow": ("flow",),
                    "both": ("field", "flow")}[task.options.get("tangent", "both")]
        verdicts = {}
        ok = True
        worst = 0.0
        for tg in tangents:
            v = variational_check(F, {d: X.phi[d] for d in F.deps}, u0, tspan,
                                  h=h, tol=tol, tangent=tg)
            verdicts[f"tangent-{tg}"] = ("pass" if v.passed else "fail") + \
                f" (residual {v.max_residual:.3e})"
            ok = ok and v.passed
            worst = max(worst, v.max_residual)
        res["status"] = "pass" if ok else "fail"
        res["verdicts"] = verdicts
        res["max_residual"] = worst

    def task_series_check(self, task, res, i):
        X = _apply_field(_named(self.spec.fields, task.options.get("field"),
                                "vector field"), self.asm)
        a = self._applied_ansatz(_named(self.spec.ansatze,
                                        task.options.get("ansatz"), "ansatz"))
        k = _as_int(task.options.get("k", ex.Rat(3)))
        system = self.base_system()
        terms = exp_series_terms(X, system, k)
        ctx = self.spec.ctx
        rng = self.rng(i)
        tol = self.tol or 1e-8
        worst = 0.0
        ok = True
        rows = []
        for r, row in enumerate(terms, start=1):
            for e in row:
                rules = family_substitution(a, ctx, [e])
                residual = ex.substitute(e, rules)
                st = ex.is_zero(residual, tol=tol, rng=rng)
                worst = max(worst, st.max_abs)
                ok = ok and st.is_zero()
                rows.append({"r": r, "verdict": st.verdict})
        res["status"] = "pass" if ok else "fail"
        res["terms"] = rows
        res["max_residual"] = worst

    # -- helpers --------------------------------------------------------

    def _fresh_asm(self):
        return Assumptions(nonzero=[self.asm.apply(e) for e in self.asm.nonzero],
                           param_subst=dict(self.asm.param_subst))

    def _applied_ansatz(self, a):
        return type(a)(a.name, {d: self.asm.apply(e) for d, e in a.exprs.items()},
                       constants=a.constants, has_lambda=a.has_lambda,
                       domain=a.domain)

    def _verdict(self, res, v):
        if v.passed:
            res["status"] = "pass"
        elif any(s.verdict == ex.ZeroStatus.NONZERO for s in v.statuses):
            res["status"] = "fail"
        else:
            res["status"] = "unknown"
        res["verdicts"] = {"mode": "symbolic" if v.symbolic else "numeric"}
        res["max_residual"] = v.max_residual

    def _check_expectation(self, exp, res):
        ok = False
        if "error" in res:
            ok = False
        elif exp.kind in ("status", "verdict"):
            ok = res.get("status") == exp.value
        elif exp.kind == "order":
            ok = res.get("order") == exp.value
        elif exp.kind == "restricted":
            steps = {s["r"]: s for s in res.get("chain", ())}
            if exp.step not in steps:
                return {"text": exp.text, "ok": False,
                        "note": f"chain produced no step {exp.step}"}
            got_printed = steps[exp.step]["restricted"]
            if isinstance(got_printed, list):
                return {"text": exp.text, "ok": False,
                        "note": "multi-component step"}
            from .parser import parse_expr
            got = parse_expr(got_printed, self.spec.ctx)
            ok = _proportional(got, exp.value)
        return {"text": exp.text, "ok": bool(ok)}


def _proportional(a, b):
    """Equal up to a nonzero rational multiple."""
    a = ex.normalize(a)
    b = ex.normalize(b)
    if a == ex.ZERO or b == ex.ZERO:
        return a == b
    ta = ex._terms_of(a)
    tb = ex._terms_of(b)
    if not ta or not tb:
        return a == b
    ta.sort(key=lambda t: tuple((bb.key, (e.numerator, e.denominator))
                                for bb, e in t[1]))
    tb.sort(key=lambda t: tuple((bb.key, (e.numerator, e.denominator))
                                for bb, e in t[1]))
    ratio = ta[0][0] / tb[0][0]
    return ex.add(a, ex.mul(ex.Rat(-ratio), b)) == ex.ZERO


def _as_int(v):
    if isinstance(v, ex.Rat) and v.value.denominator == 1:
        return v.value.numerator
    if isinstance(v, int):
        return v
    raise TaskError(f"expected an integer option, got {v!r}")


def _as_float(v):
    if isinstance(v, ex.Expr):
        return ex.evaluate(v, {})
    return float(v)


def run(paths, pretty=False, max_order=None, strong=False, tol=None, seed=0,
        out=None):
    """Execute problem files; returns (exit_code, report_text)."""
    all_results = []
    problem_names = []
    errors = False
    mismatch = False
    for path in sorted(paths):
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as err:
            return 2, f"error: cannot read {path}: {err}\n"
        try:
            spec = parse_problem(text, name=p.name)
        except ParseError as err:
            msgs = "\n".join(d.format(p.name) for d in err.diagnostics)
            return 2, f"error: parse failed\n{msgs}\n"
        runner = Runner(spec, max_order=max_order, strong=strong, tol=tol,
                        seed=seed)
        results, had_error = runner.run_tasks()
        errors = errors or had_error
        for res in results:
            if res.get("status") in INDEFINITE:
                mismatch = True
            for e in res.get("expectations", ()):
                if not e["ok"]:
                    mismatch = True
        problem_names.append(p.name)
        all_results.extend(results)
    name = ", ".join(problem_names) if problem_names else "<none>"
    text = emit_pretty(name, all_results) if pretty \
        else emit_report(name, all_results)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    code = 2 if errors else (1 if mismatch else 0)
    return code, text


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="psym",
        description="Partial-symmetry analysis of differential systems")
    ap.add_argument("files", nargs="+", help="problem files (.psym)")
    ap.add_argument("--pretty", action="store_true",
                    help="human-readable text instead of JSON")
    ap.add_argument("--max-order", type=int, default=None,
                    help="override chain truncation order")
    ap.add_argument("--strong", action="store_true",
                    help="run chains without solution-manifold restriction")
    ap.add_argument("--tol", type=float, default=None,
                    help="numeric zero-test tolerance")
    ap.add_argument("--seed", type=int, default=0,
                    help="seed for numeric sampling")
    ap.add_argument("--out", default=None, help="write the report to a file")
    args = ap.parse_args(argv)
    code, text = run(args.files, pretty=args.pretty, max_order=args.max_order,
                     strong=args.strong, tol=args.tol, seed=args.seed,
                     out=args.out)
    stream = sys.stderr if code == 2 and text.startswith("error:") else sys.stdout
    stream.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
