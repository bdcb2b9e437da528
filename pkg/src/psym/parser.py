"""Problem-file DSL: lexer, Pratt expression parser, problem resolution.

Statements are ``;``-terminated, ``#`` starts a line comment.  Statement
heads: independent, dependent, parameter, constantspace, function, equation,
solvefor, vectorfield, generalizedfield, discretemap, assume, ansatz, task,
expect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import expr as ex
from .context import JetContext
from .engine import Assumptions
from .jet import VectorField, DiscreteMap, total_derivative, FieldError, \
    UnsupportedMapError
from .verify import Ansatz


@dataclass(frozen=True)
class SourceSpan:
    begin: int
    end: int
    line: int
    column: int


@dataclass(frozen=True)
class Diagnostic:
    message: str
    span: SourceSpan

    def format(self, filename="<input>"):
        return f"{filename}:{self.span.line}:{self.span.column}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(d.message for d in self.diagnostics))


# ---------------------------------------------------------------------------
# lexer

_PUNCT = ("(", ")", "[", "]", ",", ";", ":", "=", "+", "-", "*", "/", "^", "'")


@dataclass(frozen=True)
class Token:
    kind: str        # "ident" | "int" | punct | "eof"
    text: str
    span: SourceSpan


def tokenize(text):
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)

    def span(start, end, l, c):
        return SourceSpan(start, end, l, c)

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start, l0, c0 = i, line, col
        if ch.isalpha() or ch == "_":
            while i < n and (text[i].isalnum() or text[i] == "_"):
                i += 1
                col += 1
            tokens.append(Token("ident", text[start:i], span(start, i, l0, c0)))
            continue
        if ch.isdigit():
            while i < n and text[i].isdigit():
                i += 1
                col += 1
            if i < n and text[i] == ".":
                raise ParseError([Diagnostic(
                    "decimal literals are not supported; use exact fractions",
                    span(start, i + 1, l0, c0))])
            tokens.append(Token("int", text[start:i], span(start, i, l0, c0)))
            continue
        if ch in _PUNCT:
            i += 1
            col += 1
            tokens.append(Token(ch, ch, span(start, i, l0, c0)))
            continue
        raise ParseError([Diagnostic(f"unexpected character {ch!r}",
                                     span(start, i + 1, l0, c0))])
    tokens.append(Token("eof", "", span(n, n, line, col)))
    return tokens


# ---------------------------------------------------------------------------
# Pratt expression parser

_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_BP = 25


class _ExprParser:
    def __init__(self, tokens, pos, ctx, extra_symbols=None):
        self.toks = tokens
        self.pos = pos
        self.ctx = ctx
        self.extra = extra_symbols or {}

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError([Diagnostic(message, tok.span)])

    def expect(self, kind):
        t = self.next()
        if t.kind != kind:
            self.fail(f"expected {kind!r}, found {t.text!r}", t)
        return t

    def parse(self, bp=0):
        left = self.nud(self.next())
        while _BP.get(self.peek().kind, -1) > bp or \
                (self.peek().kind == "^" and _BP["^"] >= bp > 0 and False):
            op = self.next()
            if op.kind == "^":
                right = self.parse(_BP["^"] - 1)   # right associative
                left = self._power(left, right, op)
            elif op.kind == "*":
                left = ex.mul(left, self.parse(_BP["*"]))
            elif op.kind == "/":
                left = self._divide(left, self.parse(_BP["/"]), op)
            elif op.kind == "+":
                left = ex.add(left, self.parse(_BP["+"]))
            elif op.kind == "-":
                left = ex.add(left, ex.mul(ex.MINUS_ONE, self.parse(_BP["-"])))
        return left

    def _power(self, base, exponent, tok):
        if not isinstance(exponent, ex.Rat):
            self.fail("exponents must be rational constants", tok)
        try:
            return ex.pow_(base, exponent.value)
        except ex.MalformedExpressionError as err:
            self.fail(str(err), tok)

    def _divide(self, a, b, tok):
        if isinstance(b, ex.Rat) and b.value == 0:
            self.fail("division by the literal zero constant", tok)
        return ex.mul(a, ex.pow_(b, Fraction(-1)))

    def nud(self, t):
        if t.kind == "int":
            return ex.integer(int(t.text))
        if t.kind == "(":
            inner = self.parse(0)
            self.expect(")")
            return inner
        if t.kind == "-":
            return ex.mul(ex.MINUS_ONE, self.parse(_UNARY_BP))
        if t.kind == "ident":
            return self.ident(t)
        self.fail(f"unexpected token {t.text!r}", t)

    def ident(self, t):
        name = t.text
        nxt = self.peek()
        # derivative sugar D<independent>( ... )
        if nxt.kind == "(" and len(name) > 1 and name.startswith("D"):
            tail = name[1:]
            for i, xs in enumerate(self.ctx.independents):
                if xs.name == tail:
                    self.next()
                    inner = self.parse(0)
                    self.expect(")")
                    return total_derivative(inner, i, self.ctx)
        if nxt.kind == "(" and name == "sqrt":
            self.next()
            inner = self.parse(0)
            self.expect(")")
            return ex.pow_(inner, Fraction(1, 2))
        if nxt.kind == "(" and name in ex.ELEMENTARY:
            self.next()
            inner = self.parse(0)
            self.expect(")")
            try:
                return ex.fun(name, inner)
            except ex.MalformedExpressionError as err:
                self.fail(str(err), t)
        if name == "pd":
            return self.parse_pd(t)
        if name in self.ctx.functions:
            return self.parse_ufun(t, name)
        if name in self.extra:
            return self.extra[name]
        s = self.ctx.lookup(name)
        if s is None:
            self.fail(f"undeclared symbol {name!r}", t)
        if self.peek().kind == "(":
            self.fail(f"{name!r} is not a function", t)
        return ex.Sym(s)

    def parse_ufun(self, t, name):
        arity = self.ctx.functions[name]
        primes = 0
        while self.peek().kind == "'":
            self.next()
            primes += 1
        if primes and arity != 1:
            self.fail("prime derivatives apply to one-argument functions; "
                      "use pd(...) for several slots", t)
        self.expect("(")
        args = self.parse_args()
        if len(args) != arity:
            self.fail(f"function {name!r} expects {arity} argument(s), "
                      f"got {len(args)}", t)
        if primes:
            return ex.uder(name, (primes,), args)
        return ex.ufun(name, *args)

    def parse_pd(self, t):
        self.expect("(")
        fname_tok = self.expect("ident")
        fname = fname_tok.text
        if fname not in self.ctx.functions:
            self.fail(f"undeclared function {fname!r}", fname_tok)
        orders = []
        while self.peek().kind == ",":
            self.next()
            orders.append(int(self.expect("int").text))
        self.expect(")")
        arity = self.ctx.functions[fname]
        if len(orders) != arity:
            self.fail(f"pd({fname}, ...) needs {arity} derivative order(s)",
                      fname_tok)
        self.expect("(")
        args = self.parse_args()
        if len(args) != arity:
            self.fail(f"function {fname!r} expects {arity} argument(s)", fname_tok)
        return ex.uder(fname, orders, args)

    def parse_args(self):
        args = [self.parse(0)]
        while self.peek().kind == ",":
            self.next()
            args.append(self.parse(0))
        self.expect(")")
        return args


def parse_expr(text, ctx, extra_symbols=None):
    """Parse a standalone expression against a context."""
    tokens = tokenize(text)
    p = _ExprParser(tokens, 0, ctx, extra_symbols)
    e = p.parse(0)
    if p.peek().kind != "eof":
        p.fail(f"trailing input {p.peek().text!r}")
    return e


# ---------------------------------------------------------------------------
# problem files


@dataclass
class Equation:
    name: str
    expr: ex.Expr
    solve_for: Optional[object]      # jet Symbol or None
    span: SourceSpan


@dataclass
class Expectation:
    kind: str                        # "status" | "order" | "restricted" | "verdict"
    value: object
    step: Optional[int]
    text: str
    span: SourceSpan


@dataclass
class TaskRequest:
    kind: str
    options: dict
    span: SourceSpan
    expectations: list = field(default_factory=list)


TASK_KINDS = ("exact", "chain", "discrete_chain", "conditional", "frechet",
              "ds_commutator", "verify", "orbit", "variational", "series_check")


@dataclass
class ProblemSpec:
    name: str
    ctx: JetContext
    equations: list
    fields: dict
    maps: dict
    assumptions: Assumptions
    assumed_nonzero: list
    parameter_constraints: list      # (lhs Expr, span) as written
    ansatze: dict
    tasks: list


_DECL_HEADS = ("independent", "dependent", "parameter", "constantspace", "function")
_HEADS = _DECL_HEADS + ("equation", "solvefor", "vectorfield", "generalizedfield",
                        "discretemap", "assume", "ansatz", "task", "expect")


class _ProblemParser:
    def __init__(self, text, name="<input>"):
        self.text = text
        self.name = name
        self.toks = tokenize(text)
        self.pos = 0
        self.decl = {"independent": [], "dependent": [], "parameter": [],
                     "constantspace": [], "function": {}}
        self.decl_spans = {}
        self.ctx = None
        self.equations = []
        self.fields = {}
        self.maps = {}
        self.nonzero = []
        self.param_constraints = []
        self.ansatze = {}
        self.tasks = []

    # -- token helpers ----------------------------------------------------

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError([Diagnostic(message, tok.span)])

    def expect(self, kind, what=None):
        t = self.next()
        if t.kind != kind:
            self.fail(f"expected {what or kind!r}, found {t.text or 'end of input'!r}", t)
        return t

    def expect_ident(self, what="identifier"):
        return self.expect("ident", what)

    def parse_expression(self, stop=(";",), extra=None):
        p = _ExprParser(self.toks, self.pos, self.ctx, extra)
        e = p.parse(0)
        self.pos = p.pos
        if self.peek().kind not in stop:
            self.fail(f"unexpected token {self.peek().text!r} in expression")
        return e

    # -- driver -----------------------------------------------------------

    def run(self):
        while self.peek().kind != "eof":
            head = self.expect_ident("statement")
            if head.text not in _HEADS:
                self.fail(f"unknown statement head {head.text!r}", head)
            if head.text in _DECL_HEADS:
                if self.ctx is not None:
                    self.fail("declarations must precede equations and tasks", head)
                getattr(self, "stmt_" + head.text)(head)
            else:
                self.freeze_context(head)
                getattr(self, "stmt_" + head.text)(head)
        self.freeze_context(None)
        spec = ProblemSpec(
            name=self.name, ctx=self.ctx, equations=self.equations,
            fields=self.fields, maps=self.maps,
            assumptions=self.build_assumptions(),
            assumed_nonzero=list(self.nonzero),
            parameter_constraints=list(self.param_constraints),
            ansatze=self.ansatze, tasks=self.tasks)
        self.validate(spec)
        return spec

    def freeze_context(self, head):
        if self.ctx is not None:
            return
        try:
            self.ctx = JetContext(
                independent=self.decl["independent"],
                dependent=self.decl["dependent"],
                parameters=self.decl["parameter"],
                constants=self.decl["constantspace"],
                functions=self.decl["function"])
        except Exception as err:
            span = head.span if head else SourceSpan(0, 0, 1, 1)
            raise ParseError([Diagnostic(str(err), span)])

    def build_assumptions(self):
        subst = {}
        for lhs, span in self.param_constraints:
            e = ex.substitute(lhs, subst) if subst else lhs
            p, val = _solve_for_parameter(e)
            if p is None:
                raise ParseError([Diagnostic(
                    "assumption must be linear in some parameter with a "
                    "rational coefficient", span)])
            subst[p] = val
            subst = {k: ex.substitute(v, {p: val}) for k, v in subst.items()}
        return Assumptions(nonzero=self.nonzero, param_subst=subst)

    def validate(self, spec):
        names = set()
        for eqn in spec.equations:
            if eqn.name in names:
                raise ParseError([Diagnostic(
                    f"duplicate equation name {eqn.name!r}", eqn.span)])
            names.add(eqn.name)

    # -- declarations -------------------------------------------------------

    def ident_list(self):
        out = [self.expect_ident().text]
        while self.peek().kind == ",":
            self.next()
            out.append(self.expect_ident().text)
        self.expect(";")
        return out

    def declare(self, kind, names, span):
        for n in names:
            for k, lst in self.decl.items():
                pool = lst.keys() if isinstance(lst, dict) else lst
                if n in pool:
                    raise ParseError([Diagnostic(
                        f"duplicate declaration of {n!r}", span)])
            if n == "lambda" or (n.startswith("D") and len(n) > 1):
                raise ParseError([Diagnostic(
                    f"{n!r} is reserved", span)])
        if isinstance(self.decl[kind], dict):
            raise AssertionError
        self.decl[kind].extend(names)

    def stmt_independent(self, head):
        self.declare("independent", self.ident_list(), head.span)

    def stmt_dependent(self, head):
        self.declare("dependent", self.ident_list(), head.span)

    def stmt_parameter(self, head):
        self.declare("parameter", self.ident_list(), head.span)

    def stmt_constantspace(self, head):
        self.declare("constantspace", self.ident_list(), head.span)

    def stmt_function(self, head):
        while True:
            name_tok = self.expect_ident("function name")
            self.expect("(")
            arity = int(self.expect("int").text)
            self.expect(")")
            if name_tok.text in self.decl["function"]:
                self.fail(f"duplicate declaration of {name_tok.text!r}", name_tok)
            if arity < 1:
                self.fail("function arity must be at least 1", name_tok)
            self.decl["function"][name_tok.text] = arity
            if self.peek().kind == ",":
                self.next()
                continue
            break
        self.expect(";")

    # -- core statements ----------------------------------------------------

    def stmt_equation(self, head):
        name = self.expect_ident("equation name").text
        self.expect(":")
        lhs = self.parse_expression(stop=("=",))
        self.expect("=")
        zero_tok = self.next()
        if not (zero_tok.kind == "int" and zero_tok.text == "0"):
            self.fail("equations are written <expr> = 0", zero_tok)
        self.expect(";")
        self.equations.append(Equation(name, lhs, None, head.span))

    def stmt_solvefor(self, head):
        name_tok = self.expect_ident("equation name")
        self.expect(":")
        coord_expr = self.parse_expression(stop=(";",))
        self.expect(";")
        if not isinstance(coord_expr, ex.Sym) or not coord_expr.sym.is_jet():
            self.fail("solvefor needs a single jet coordinate", name_tok)
        for eqn in self.equations:
            if eqn.name == name_tok.text:
                eqn.solve_for = coord_expr.sym
                return
        self.fail(f"unknown equation {name_tok.text!r}", name_tok)

    def _field_components(self, allow_xi):
        xi, phi = {}, {}
        while self.peek().kind == "ident" and self.peek().text in ("xi", "phi"):
            comp = self.next()
            self.expect("(")
            var_tok = self.expect_ident("variable")
            self.expect(")")
            self.expect("=")
            e = self.parse_expression(stop=(";",))
            self.expect(";")
            s = self.ctx.lookup(var_tok.text)
            if comp.text == "xi":
                if not allow_xi:
                    self.fail("generalized fields have no xi components", comp)
                if s is None or s.kind != ex.KIND_INDEPENDENT:
                    self.fail(f"xi component needs an independent variable, "
                              f"got {var_tok.text!r}", var_tok)
                xi[s] = e
            else:
                if s is None or not s.is_jet() or s.order != 0:
                    self.fail(f"phi component needs a dependent variable, "
                              f"got {var_tok.text!r}", var_tok)
                phi[s] = e
        if not xi and not phi:
            self.fail("expected at least one xi(...) or phi(...) component")
        return xi, phi

    def stmt_vectorfield(self, head):
        name = self.expect_ident("field name").text
        self.expect(":")
        xi, phi = self._field_components(allow_xi=True)
        try:
            self.fields[name] = VectorField(self.ctx, xi=xi, phi=phi,
                                            kind="point", name=name)
        except FieldError as err:
            self.fail(str(err), head)

    def stmt_generalizedfield(self, head):
        name = self.expect_ident("field name").text
        self.expect(":")
        _, phi = self._field_components(allow_xi=False)
        try:
            self.fields[name] = VectorField(self.ctx, phi=phi,
                                            kind="generalized", name=name)
        except FieldError as err:
            self.fail(str(err), head)

    def stmt_discretemap(self, head):
        name = self.expect_ident("map name").text
        self.expect(":")
        xmap, umap = {}, {}
        period = None
        while self.peek().kind == "ident" and self.peek().text in ("map", "period"):
            comp = self.next()
            if comp.text == "period":
                period = int(self.expect("int").text)
                self.expect(";")
                continue
            self.expect("(")
            var_tok = self.expect_ident("variable")
            self.expect(")")
            self.expect("=")
            e = self.parse_expression(stop=(";",))
            self.expect(";")
            s = self.ctx.lookup(var_tok.text)
            if s is not None and s.kind == ex.KIND_INDEPENDENT:
                xmap[s] = e
            elif s is not None and s.is_jet() and s.order == 0:
                umap[s] = e
            else:
                self.fail(f"map component needs a declared variable, "
                          f"got {var_tok.text!r}", var_tok)
        missing = [s.name for s in self.ctx.independents if s not in xmap]
        missing += [s.name for s in self.ctx.dependents if s not in umap]
        if missing:
            self.fail(f"discrete map must define every variable; missing "
                      f"{', '.join(missing)}", head)
        try:
            self.maps[name] = DiscreteMap(self.ctx, xmap, umap, period=period,
                                          name=name)
        except UnsupportedMapError as err:
            self.fail(str(err), head)

    def stmt_assume(self, head):
        if self.peek().kind == "ident" and self.peek().text == "nonzero":
            self.next()
            e = self.parse_expression(stop=(";",))
            self.expect(";")
            self.nonzero.append(e)
            return
        lhs = self.parse_expression(stop=("=",))
        eq_tok = self.expect("=")
        zero_tok = self.next()
        if not (zero_tok.kind == "int" and zero_tok.text == "0"):
            self.fail("assumptions are written <expr> = 0 or nonzero <expr>",
                      zero_tok)
        self.expect(";")
        if not _param_only(lhs):
            self.fail("equality assumptions may involve parameters only", eq_tok)
        self.param_constraints.append((lhs, head.span))

    def stmt_ansatz(self, head):
        name = self.expect_ident("ansatz name").text
        self.expect(":")
        exprs = {}
        while True:
            var_tok = self.expect_ident("dependent variable")
            s = self.ctx.lookup(var_tok.text)
            if s is None or not s.is_jet() or s.order != 0:
                self.fail(f"ansatz components are dependent variables, "
                          f"got {var_tok.text!r}", var_tok)
            self.expect("=")
            e = self.parse_expression(stop=(",", ";"))
            exprs[s] = e
            if self.peek().kind == ",":
                self.next()
                continue
            break
        self.expect(";")
        missing = [s.name for s in self.ctx.dependents if s not in exprs]
        if missing:
            self.fail(f"ansatz must define every dependent variable; missing "
                      f"{', '.join(missing)}", head)
        has_lam = any(ex.contains_symbol(e, self.ctx.lam) for e in exprs.values())
        consts = tuple(c.name for c in self.ctx.constants
                       if any(ex.contains_symbol(e, c) for e in exprs.values()))
        self.ansatze[name] = Ansatz(name, exprs, constants=consts,
                                    has_lambda=has_lam)

    def stmt_task(self, head):
        kind_tok = self.expect_ident("task kind")
        if kind_tok.text not in TASK_KINDS:
            self.fail(f"unknown task kind {kind_tok.text!r}; expected one of "
                      f"{', '.join(TASK_KINDS)}", kind_tok)
        options = {}
        while self.peek().kind == "ident":
            key_tok = self.next()
            key = key_tok.text
            if self.peek().kind != "=":
                options[key] = True       # bare flag, e.g. strong
                continue
            self.next()
            if self.peek().kind == "(":
                self.next()
                vals = [self.parse_expression(stop=(",", ")"))]
                while self.peek().kind == ",":
                    self.next()
                    vals.append(self.parse_expression(stop=(",", ")")))
                self.expect(")")
                options[key] = tuple(vals)
            elif key in ("field", "map", "ansatz", "tangent", "on"):
                options[key] = self.expect_ident("name").text
            else:
                options[key] = self.parse_expression(stop=(";", "ident"))
        self.expect(";")
        self.tasks.append(TaskRequest(kind_tok.text, options, head.span))

    def stmt_expect(self, head):
        if not self.tasks:
            self.fail("expect must follow a task", head)
        what_tok = self.expect_ident("expectation kind")
        what = what_tok.text
        if what == "restricted":
            self.expect("[")
            step = int(self.expect("int").text)
            self.expect("]")
            self.expect("=")
            e = self.parse_expression(stop=(";",))
            self.expect(";")
            text = f"restricted[{step}] = {ex.to_str(e)}"
            exp = Expectation("restricted", e, step, text, head.span)
        elif what in ("status", "verdict"):
            self.expect("=")
            val_tok = self.expect_ident("value")
            value = val_tok.text
            while self.peek().kind == "-":
                self.next()
                value += "-" + self.expect_ident("value").text
            self.expect(";")
            exp = Expectation(what, value, None,
                              f"{what} = {value}", head.span)
        elif what == "order":
            self.expect("=")
            val = int(self.expect("int").text)
            self.expect(";")
            exp = Expectation("order", val, None, f"order = {val}", head.span)
        else:
            self.fail(f"unknown expectation {what!r}", what_tok)
        self.tasks[-1].expectations.append(exp)


def _param_only(e):
    return all(s.kind in (ex.KIND_PARAMETER,) for s in ex.free_symbols(e)) \
        and not ex.ufunc_names(e)


def _solve_for_parameter(e):
    for s in sorted(ex.free_symbols(e)):
        if s.kind != ex.KIND_PARAMETER:
            continue
        if ex.poly_degree_in(e, s) == 1:
            c = ex.coefficient_of(e, s, 1)
            if isinstance(c, ex.Rat):
                rest = ex.add(e, ex.mul(ex.MINUS_ONE, c, ex.Sym(s)))
                return s, ex.mul(ex.MINUS_ONE, rest, ex.pow_(c, -1))
    return None, None


def parse_problem(text, name="<input>"):
    return _ProblemParser(text, name).run()
