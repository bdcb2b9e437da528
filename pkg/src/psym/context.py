"""Jet-space bookkeeping: variable declarations and jet coordinates."""

from __future__ import annotations

from .expr import (
    KIND_ANSATZ_CONSTANT,
    KIND_DEPENDENT,
    KIND_GROUP_PARAMETER,
    KIND_INDEPENDENT,
    KIND_PARAMETER,
    Symbol,
)


class ContextError(Exception):
    pass


def mi_add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def mi_sub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def mi_ge(a, b):
    return all(x >= y for x, y in zip(a, b))


def mi_order(a):
    return sum(a)


def unit_index(p, i):
    return tuple(1 if j == i else 0 for j in range(p))


class JetContext:
    """Declared variables plus on-demand jet coordinates.

    Jet coordinates are canonical per sorted multi-index, so u_xy and u_yx are
    the same symbol.  Immutable after construction except for the jet cache.
    """

    def __init__(self, independent, dependent, parameters=(), constants=(),
                 functions=None):
        if not independent or not dependent:
            raise ContextError("need at least one independent and one dependent variable")
        self.independents = tuple(Symbol(n, KIND_INDEPENDENT) for n in independent)
        self.parameters = tuple(Symbol(n, KIND_PARAMETER) for n in parameters)
        self.constants = tuple(Symbol(n, KIND_ANSATZ_CONSTANT) for n in constants)
        self.lam = Symbol("lambda", KIND_GROUP_PARAMETER)
        self.functions = dict(functions or {})
        self.p = len(self.independents)
        self.q = len(dependent)
        self._dep_names = tuple(dependent)
        self._jets = {}
        self.dependents = tuple(
            self._make_jet(alpha, (0,) * self.p) for alpha in range(self.q))
        names = [s.name for s in self.independents + self.parameters + self.constants]
        names += list(dependent) + ["lambda"] + list(self.functions)
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ContextError(f"duplicate declarations: {sorted(dupes)}")
        self._by_name = {s.name: s for s in
                         self.independents + self.parameters + self.constants
                         + self.dependents + (self.lam,)}

    def _make_jet(self, alpha, index):
        key = (alpha, index)
        if key not in self._jets:
            base = self._dep_names[alpha]
            if mi_order(index) == 0:
                name = base
            else:
                suffix = "".join(v.name * c for v, c in zip(self.independents, index))
                name = f"{base}_{suffix}"
            self._jets[key] = Symbol(name, KIND_DEPENDENT, alpha=alpha, index=index)
        return self._jets[key]

    def jet(self, dep, index):
        """Jet coordinate for a dependent variable (by symbol, name or slot)."""
        if isinstance(dep, Symbol):
            alpha = dep.alpha
        elif isinstance(dep, str):
            alpha = self._dep_names.index(dep)
        else:
            alpha = int(dep)
        index = tuple(int(c) for c in index)
        if len(index) != self.p:
            raise ContextError("multi-index length must match the independents")
        return self._make_jet(alpha, index)

    def bump(self, jet_sym, i):
        """The jet coordinate one derivative (in independent slot i) above."""
        return self._make_jet(jet_sym.alpha, mi_add(jet_sym.index, unit_index(self.p, i)))

    def lookup(self, name):
        s = self._by_name.get(name)
        if s is not None:
            return s
        return self._parse_jet_name(name)

    def _parse_jet_name(self, name):
        if "_" not in name:
            return None
        base, _, suffix = name.rpartition("_")
        if base not in self._dep_names:
            return None
        counts = [0] * self.p
        rest = suffix
        vnames = sorted(((v.name, i) for i, v in enumerate(self.independents)),
                        key=lambda t: -len(t[0]))
        while rest:
            for vname, i in vnames:
                if rest.startswith(vname):
                    counts[i] += 1
                    rest = rest[len(vname):]
                    break
            else:
                return None
        if sum(counts) == 0:
            return None
        return self.jet(base, counts)

    def independent_index(self, s):
        return self.independents.index(s)
