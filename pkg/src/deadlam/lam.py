"""Lams: dependency / invocation terms with binders, ``&`` and ``+``.

Terms are immutable and kept in a canonical form by the smart constructors
:func:`conj` and :func:`disj`: both operators are flattened, ``0`` is dropped
as a unit, operands are sorted, identical disjuncts and identical
dependencies inside a conjunction are collapsed.  Identical *invocations*
inside a conjunction are kept, since two calls may spawn two threads.

Structured types (the arguments of invocations) are trees::

    a[f: b[g: int]:D, h: _]:C      node a of class C
    ?X                             variable, matches any subtree
    _                              top (no usable identity)

The ``.lam`` text format is ``name(p1, ..., pn) [-> ret] = expr`` per
definition, ``main = expr`` last.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple, Union

CHECK = "✓"
BULLET = "•"
LOCK_PREFIX = "lock$"


def lock_name(thread: str) -> str:
    """The pseudo-lock a thread holds from birth."""
    return LOCK_PREFIX + thread


def lock_owner(name: str) -> Optional[str]:
    return name[len(LOCK_PREFIX):] if name.startswith(LOCK_PREFIX) else None


class LamError(ValueError):
    pass


class UnificationError(LamError):
    pass


class StateLimitError(LamError):
    """Raised when a disjunctive normal form exceeds the configured size."""


# ------------------------------------------------------------ structured types


@dataclass(frozen=True)
class Leaf:
    kind: str  # "top" | "int"

    def __str__(self) -> str:
        return "_" if self.kind == "top" else "int"


TOP = Leaf("top")
INT = Leaf("int")


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


@dataclass(frozen=True)
class Node:
    root: str
    fields: Tuple[Tuple[str, "SType"], ...] = ()
    cls: Optional[str] = None

    def field(self, name: str) -> Optional["SType"]:
        for f, v in self.fields:
            if f == name:
                return v
        return None

    def __str__(self) -> str:
        s = self.root
        if self.fields:
            s += "[" + ", ".join(f"{f}: {v}" for f, v in self.fields) + "]"
        if self.cls:
            s += ":" + self.cls
        return s


SType = Union[Leaf, Var, Node]


def root(rho: SType) -> Optional[str]:
    return rho.root if isinstance(rho, Node) else None


def stype_names(rho: SType) -> List[str]:
    """Node names of a structured type in preorder."""
    if isinstance(rho, Node):
        out = [rho.root]
        for _, v in rho.fields:
            out.extend(stype_names(v))
        return out
    return []


def stype_vars(rho: SType) -> List[str]:
    if isinstance(rho, Var):
        return [rho.name]
    if isinstance(rho, Node):
        return [x for _, v in rho.fields for x in stype_vars(v)]
    return []


def rename_stype(rho: SType, f: Callable[[str], str], trees: Mapping[str, SType] = {}) -> SType:
    if isinstance(rho, Node):
        return Node(f(rho.root), tuple((k, rename_stype(v, f, trees)) for k, v in rho.fields), rho.cls)
    if isinstance(rho, Var) and rho.name in trees:
        return trees[rho.name]
    return rho


# ------------------------------------------------------------------- lams


class Lam:
    __slots__ = ()

    def __str__(self) -> str:
        return print_term(self)

    def __and__(self, other: "Lam") -> "Lam":
        return conj(self, other)

    def __add__(self, other: "Lam") -> "Lam":
        return disj(self, other)


@dataclass(frozen=True)
class Zero(Lam):
    pass


ZERO = Zero()


@dataclass(frozen=True, order=True)
class Dep(Lam):
    """``(holder, wanted)_thread``: thread owns ``holder`` and wants ``wanted``."""

    holder: str
    wanted: str
    thread: str


@dataclass(frozen=True)
class Invoke(Lam):
    fn: str
    args: Tuple[SType, ...]
    ret: Tuple[SType, ...] = ()


@dataclass(frozen=True)
class Nu(Lam):
    names: Tuple[str, ...]
    body: Lam


@dataclass(frozen=True)
class And(Lam):
    items: Tuple[Lam, ...]


@dataclass(frozen=True)
class Or(Lam):
    items: Tuple[Lam, ...]


def _sort_key(term: Lam) -> Tuple[int, str]:
    order = {Dep: 0, Invoke: 1, Nu: 2, And: 3, Or: 4}
    return order.get(type(term), 5), print_term(term)


def conj(*terms: Lam) -> Lam:
    items: List[Lam] = []
    deps: Set[Dep] = set()
    for t in terms:
        for x in t.items if isinstance(t, And) else (t,):
            if isinstance(x, Zero):
                continue
            if isinstance(x, Dep):
                if x in deps:
                    continue
                deps.add(x)
            items.append(x)
    if not items:
        return ZERO
    if len(items) == 1:
        return items[0]
    return And(tuple(sorted(items, key=_sort_key)))


def disj(*terms: Lam) -> Lam:
    items: Dict[Tuple[int, str], Lam] = {}
    for t in terms:
        for x in t.items if isinstance(t, Or) else (t,):
            if not isinstance(x, Zero):
                items.setdefault(_sort_key(x), x)
    if not items:
        return ZERO
    if len(items) == 1:
        return next(iter(items.values()))
    return Or(tuple(items[k] for k in sorted(items)))


def nu(names: Iterable[str], body: Lam) -> Lam:
    names = tuple(sorted(set(names)))
    if not names or isinstance(body, Zero):
        return body
    return Nu(names, body)


def normalize(term: Lam) -> Lam:
    """AC-normal form modulo the unit ``0`` and the idempotence rules."""
    if isinstance(term, And):
        return conj(*(normalize(x) for x in term.items))
    if isinstance(term, Or):
        return disj(*(normalize(x) for x in term.items))
    if isinstance(term, Nu):
        return nu(term.names, normalize(term.body))
    return term


def ac_equal(a: Lam, b: Lam) -> bool:
    return print_term(normalize(a)) == print_term(normalize(b))


def atoms(term: Lam) -> Iterable[Lam]:
    if isinstance(term, (And, Or)):
        for x in term.items:
            yield from atoms(x)
    elif isinstance(term, Nu):
        yield from atoms(term.body)
    elif not isinstance(term, Zero):
        yield term


def term_names(term: Lam) -> Set[str]:
    """All names (bound or free) occurring in dependencies and invocations."""
    out: Set[str] = set()
    for a in atoms(term):
        if isinstance(a, Dep):
            out.update((a.holder, a.wanted, a.thread))
        else:
            for rho in a.args + a.ret:
                out.update(stype_names(rho))
    return out


def free_names(term: Lam) -> Set[str]:
    if isinstance(term, Dep):
        return {term.holder, term.wanted, term.thread}
    if isinstance(term, Invoke):
        return {n for rho in term.args + term.ret for n in stype_names(rho)}
    if isinstance(term, (And, Or)):
        return set().union(*(free_names(x) for x in term.items))
    if isinstance(term, Nu):
        bound = set(term.names)
        return {n for n in free_names(term.body) if n not in bound and lock_owner(n) not in bound}
    return set()


def substitute_name(name: str, mapping: Mapping[str, str]) -> str:
    if name in mapping:
        return mapping[name]
    owner = lock_owner(name)
    if owner is not None and owner in mapping:
        return lock_name(mapping[owner])
    return name


def rename(term: Lam, mapping: Mapping[str, str], trees: Mapping[str, SType] = {}) -> Lam:
    """Capture-free renaming of free names; ``lock$x`` follows ``x``."""
    f = lambda n: substitute_name(n, mapping)  # noqa: E731
    if isinstance(term, Dep):
        return Dep(f(term.holder), f(term.wanted), f(term.thread))
    if isinstance(term, Invoke):
        return Invoke(
            term.fn,
            tuple(rename_stype(r, f, trees) for r in term.args),
            tuple(rename_stype(r, f, trees) for r in term.ret),
        )
    if isinstance(term, And):
        return conj(*(rename(x, mapping, trees) for x in term.items))
    if isinstance(term, Or):
        return disj(*(rename(x, mapping, trees) for x in term.items))
    if isinstance(term, Nu):
        inner = {k: v for k, v in mapping.items() if k not in term.names}
        targets = set(inner.values())
        if any(n in targets for n in term.names):
            # rename clashing binders apart before substituting
            taken = targets | term_names(term.body) | set(inner)
            apart = {}
            for n in term.names:
                if n in targets:
                    m = n
                    while m in taken:
                        m += "'"
                    taken.add(m)
                    apart[n] = m
            names = tuple(apart.get(n, n) for n in term.names)
            body = rename(term.body, apart)
            return nu(names, rename(body, inner, trees))
        return nu(term.names, rename(term.body, inner, trees))
    return term


class FreshNames:
    """Supply of names ``$fresh<k>`` that never repeat."""

    def __init__(self, prefix: str = "$fresh"):
        self.prefix = prefix
        self._counter = itertools.count(1)

    def __call__(self, hint: str = "") -> str:
        return f"{self.prefix}{next(self._counter)}"


def freshen(term: Lam, fresh: Callable[[str], str]) -> Lam:
    """Replace every binder by fresh names, removing all ``Nu`` nodes."""
    if isinstance(term, Nu):
        mapping = {n: fresh(n) for n in term.names}
        return freshen(rename(term.body, mapping), fresh)
    if isinstance(term, And):
        return conj(*(freshen(x, fresh) for x in term.items))
    if isinstance(term, Or):
        return disj(*(freshen(x, fresh) for x in term.items))
    return term


# ------------------------------------------------------------ normal forms


@dataclass(frozen=True)
class ConjState:
    deps: FrozenSet[Dep] = frozenset()
    pending: Tuple[Invoke, ...] = ()

    def __and__(self, other: "ConjState") -> "ConjState":
        pending = tuple(sorted(self.pending + other.pending, key=_sort_key))
        return ConjState(self.deps | other.deps, pending)

    def to_lam(self) -> Lam:
        return conj(*sorted(self.deps), *self.pending)


EMPTY_STATE = ConjState()


def dnf(term: Lam, max_states: Optional[int] = None) -> FrozenSet[ConjState]:
    """Distribute ``&`` over ``+``; the result is a set of conjunctive states."""
    if isinstance(term, Zero):
        return frozenset({EMPTY_STATE})
    if isinstance(term, Dep):
        return frozenset({ConjState(frozenset({term}))})
    if isinstance(term, Invoke):
        return frozenset({ConjState(pending=(term,))})
    if isinstance(term, Nu):
        raise LamError("dnf expects a binder-free term; freshen it first")
    parts = [dnf(x, max_states) for x in term.items]
    if isinstance(term, Or):
        out = frozenset().union(*parts)
    else:
        out = parts[0]
        for p in parts[1:]:
            out = frozenset(a & b for a in out for b in p)
            if max_states is not None and len(out) > max_states:
                raise StateLimitError(f"more than {max_states} conjunctive states")
    if max_states is not None and len(out) > max_states:
        raise StateLimitError(f"more than {max_states} conjunctive states")
    return out


def from_states(states: Iterable[ConjState]) -> Lam:
    return disj(*(s.to_lam() for s in states))


# --------------------------------------------------------------- programs


@dataclass(frozen=True)
class LamDef:
    name: str
    params: Tuple[SType, ...]
    ret: Tuple[SType, ...]
    body: Lam

    def formals(self) -> FrozenSet[str]:
        return frozenset(n for rho in self.params + self.ret for n in stype_names(rho))

    def vars(self) -> FrozenSet[str]:
        return frozenset(v for rho in self.params + self.ret for v in stype_vars(rho))


@dataclass
class LamProgram:
    defs: Dict[str, LamDef] = field(default_factory=dict)
    main: Lam = ZERO

    def validate(self) -> None:
        """Check that invocations resolve and bodies only use bound names."""
        for d in self.defs.values():
            self._check(d.body, d.formals(), f"in {d.name}")
        self._check(self.main, None, "in main")

    def _check(self, term: Lam, scope: Optional[FrozenSet[str]], where: str) -> None:
        for a in atoms(term):
            if isinstance(a, Invoke):
                d = self.defs.get(a.fn)
                if d is None:
                    raise LamError(f"unresolved function {a.fn} {where}")
                if len(d.params) != len(a.args):
                    raise LamError(f"arity mismatch for {a.fn} {where}")
                if len(a.ret) > len(d.ret):
                    raise LamError(f"return arity mismatch for {a.fn} {where}")
        if scope is None:
            return
        allowed = set(scope) | {CHECK, BULLET}
        for n in free_names(term):
            owner = lock_owner(n)
            if n not in allowed and (owner is None or owner not in allowed):
                raise LamError(f"unbound name {n} {where}")


def match(pattern: SType, actual: SType, names: Dict[str, Optional[str]], trees: Dict[str, SType]) -> None:
    """Unify a formal structured type with an actual one.

    ``names`` maps formal node names to actual names (``None`` when the
    actual carries no identity), ``trees`` maps variables to subtrees.
    """
    if isinstance(pattern, Leaf):
        return
    if isinstance(pattern, Var):
        if pattern.name in trees and trees[pattern.name] != actual:
            raise UnificationError(f"variable ?{pattern.name} bound twice")
        trees[pattern.name] = actual
        return
    target = actual.root if isinstance(actual, Node) else None
    if pattern.root in names and names[pattern.root] != target:
        raise UnificationError(f"formal {pattern.root} bound to {names[pattern.root]} and {target}")
    names[pattern.root] = target
    if not isinstance(actual, Node):
        return
    if pattern.cls and actual.cls and pattern.cls != actual.cls:
        raise UnificationError(f"class {actual.cls} does not match formal class {pattern.cls}")
    if actual.fields:
        if [f for f, _ in pattern.fields] != [f for f, _ in actual.fields] and pattern.fields:
            raise UnificationError(f"field shapes differ for {pattern.root}")
        for (_, p), (_, a) in zip(pattern.fields, actual.fields):
            match(p, a, names, trees)


def instantiate(
    d: LamDef,
    actuals: Tuple[SType, ...],
    fresh: Callable[[str], str],
    ret_actuals: Tuple[SType, ...] = (),
) -> Tuple[Tuple[SType, ...], Lam]:
    """Instance of a definition: instantiated return types and body.

    Formal names not fixed by the actuals (new names of the definition) and
    every binder of the body are replaced by names drawn from ``fresh``.
    """
    if len(actuals) != len(d.params):
        raise LamError(f"{d.name} expects {len(d.params)} arguments, got {len(actuals)}")
    if len(ret_actuals) > len(d.ret):
        raise LamError(f"{d.name} returns {len(d.ret)} values, got {len(ret_actuals)}")
    names: Dict[str, Optional[str]] = {}
    trees: Dict[str, SType] = {}
    for p, a in zip(d.params, actuals):
        match(p, a, names, trees)
    for p, a in zip(d.ret, ret_actuals):
        match(p, a, names, trees)
    mapping: Dict[str, str] = {}
    for n in sorted(d.formals()):
        target = names.get(n)
        mapping[n] = target if target is not None else fresh(n)
    f = lambda n: substitute_name(n, mapping)  # noqa: E731
    ret = tuple(rename_stype(r, f, trees) for r in d.ret)
    body = freshen(rename(d.body, mapping, trees), fresh)
    return ret, body


def build_run_def(cls: str, carrier: SType) -> LamDef:
    """``RUN$C(a[f:ρ]) = C.run(a[f:ρ], a, lock(a)) & nu a'. RUN$C(a'[f:ρ])``."""
    if not isinstance(carrier, Node):
        raise LamError("RUN needs a node carrier")
    a = carrier.root
    twin = Node(a + "'", carrier.fields, carrier.cls)
    body = conj(
        Invoke(f"{cls}.run", (carrier, Node(a), Node(lock_name(a)))),
        nu([twin.root], Invoke(run_function(cls), (twin,))),
    )
    return LamDef(run_function(cls), (carrier,), (), body)


def run_function(cls: str) -> str:
    return f"RUN${cls}"


# ------------------------------------------------------------------ text


def _names_str(names: Iterable[str]) -> str:
    return ",".join(names)


def print_term(term: Lam) -> str:
    if isinstance(term, Zero):
        return "0"
    if isinstance(term, Dep):
        return f"({term.holder},{term.wanted})_{term.thread}"
    if isinstance(term, Invoke):
        s = f"{term.fn}({', '.join(map(str, term.args))})"
        if term.ret:
            s += " -> " + (str(term.ret[0]) if len(term.ret) == 1 else "(" + ", ".join(map(str, term.ret)) + ")")
        return s
    if isinstance(term, Nu):
        return f"nu {_names_str(term.names)}.( {print_term(term.body)} )"
    if isinstance(term, And):
        return " & ".join(f"({print_term(x)})" if isinstance(x, Or) else print_term(x) for x in term.items)
    if isinstance(term, Or):
        return " + ".join(print_term(x) for x in term.items)
    raise TypeError(term)


def print_def(d: LamDef) -> str:
    head = f"{d.name}({', '.join(map(str, d.params))})"
    if d.ret:
        head += " -> " + (str(d.ret[0]) if len(d.ret) == 1 else "(" + ", ".join(map(str, d.ret)) + ")")
    return f"{head} = {print_term(normalize(d.body))}"


def print_lam(program: LamProgram) -> str:
    lines = [print_def(program.defs[k]) for k in sorted(program.defs)]
    lines.append(f"main = {print_term(normalize(program.main))}")
    return "\n".join(lines) + "\n"


_LAM_TOKEN = re.compile(
    r"(?P<ws>\s+)|(?P<comment>//[^\n]*)"
    r"|(?P<arrow>->)"
    r"|(?P<var>\?[A-Za-z_][\w$#']*)"
    r"|(?P<name>[A-Za-z_$][\w$#']*(?:\.[\w$#']+)*|[✓•⊤])"
    r"|(?P<num>\d+)"
    r"|(?P<punct>[()\[\],:&+=.])"
)


def _lam_tokens(text: str) -> List[Tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _LAM_TOKEN.match(text, pos)
        if m is None:
            raise LamError(f"unexpected character {text[pos]!r} at offset {pos}")
        if m.lastgroup not in ("ws", "comment"):
            out.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    out.append(("eof", "", pos))
    return out


class _LamParser:
    def __init__(self, text: str):
        self.toks = _lam_tokens(text)
        self.pos = 0

    def peek(self, k: int = 0) -> Tuple[str, str, int]:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> Tuple[str, str, int]:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        kind, got, pos = self.next()
        if got != text:
            raise LamError(f"expected {text!r} at offset {pos}, found {got or 'end of input'!r}")

    def name(self) -> str:
        kind, got, pos = self.next()
        if kind != "name":
            raise LamError(f"expected a name at offset {pos}, found {got or 'end of input'!r}")
        return got

    def program(self) -> LamProgram:
        prog = LamProgram()
        saw_main = False
        while self.peek()[0] != "eof":
            if saw_main:
                raise LamError("main must be the last definition")
            name = self.name()
            if name == "main" and self.peek()[1] == "=":
                self.next()
                prog.main = self.expr()
                saw_main = True
                continue
            self.expect("(")
            params = self.stype_list(")")
            ret: Tuple[SType, ...] = ()
            if self.peek()[0] == "arrow":
                self.next()
                ret = self.ret()
            self.expect("=")
            if name in prog.defs:
                raise LamError(f"duplicate definition {name}")
            prog.defs[name] = LamDef(name, params, ret, self.expr())
        prog.validate()
        return prog

    def ret(self) -> Tuple[SType, ...]:
        if self.peek()[1] == "(":
            self.next()
            return self.stype_list(")")
        return (self.stype(),)

    def stype_list(self, close: str) -> Tuple[SType, ...]:
        out: List[SType] = []
        while self.peek()[1] != close:
            out.append(self.stype())
            if self.peek()[1] == ",":
                self.next()
            elif self.peek()[1] != close:
                raise LamError(f"expected ',' or {close!r} at offset {self.peek()[2]}")
        self.next()
        return tuple(out)

    def stype(self) -> SType:
        kind, text, pos = self.next()
        if kind == "var":
            return Var(text[1:])
        if kind != "name":
            raise LamError(f"expected a structured type at offset {pos}")
        if text in ("_", "⊤"):
            return TOP
        if text == "int":
            return INT
        fields: List[Tuple[str, SType]] = []
        if self.peek()[1] == "[":
            self.next()
            while self.peek()[1] != "]":
                f = self.name()
                self.expect(":")
                fields.append((f, self.stype()))
                if self.peek()[1] == ",":
                    self.next()
            self.next()
        cls = None
        if self.peek()[1] == ":":
            self.next()
            cls = self.name()
        return Node(text, tuple(fields), cls)

    def expr(self) -> Lam:
        terms = [self.conj_expr()]
        while self.peek()[1] == "+":
            self.next()
            terms.append(self.conj_expr())
        return disj(*terms)

    def conj_expr(self) -> Lam:
        terms = [self.atom()]
        while self.peek()[1] == "&":
            self.next()
            terms.append(self.atom())
        return conj(*terms)

    def atom(self) -> Lam:
        kind, text, pos = self.peek()
        if kind == "num" and text == "0":
            self.next()
            return ZERO
        if text == "(":
            if self.peek(1)[0] == "name" and self.peek(2)[1] == "," and self.peek(4)[1] == ")":
                return self.dep()
            self.next()
            inner = self.expr()
            self.expect(")")
            return inner
        if kind == "name" and text in ("nu", "ν"):
            self.next()
            names = [self.name()]
            while self.peek()[1] == ",":
                self.next()
                names.append(self.name())
            self.expect(".")
            self.expect("(")
            body = self.expr()
            self.expect(")")
            return Nu(tuple(names), body) if names else body
        if kind == "name":
            fn = self.name()
            self.expect("(")
            args = self.stype_list(")")
            ret: Tuple[SType, ...] = ()
            if self.peek()[0] == "arrow":
                self.next()
                ret = self.ret()
            return Invoke(fn, args, ret)
        raise LamError(f"unexpected {text or 'end of input'!r} at offset {pos}")

    def dep(self) -> Dep:
        self.expect("(")
        a = self.name()
        self.expect(",")
        b = self.name()
        self.expect(")")
        kind, text, pos = self.next()
        if kind != "name" or not text.startswith("_"):
            raise LamError(f"expected _<thread> after dependency at offset {pos}")
        label = text[1:] or self.name()
        return Dep(a, b, label)


def parse_lam(text: str) -> LamProgram:
    return _LamParser(text).program()


def parse_term(text: str) -> Lam:
    p = _LamParser(text)
    term = p.expr()
    if p.peek()[0] != "eof":
        raise LamError(f"trailing input at offset {p.peek()[2]}")
    return term
