"""Textual JVML_d assembly: parsing, validation, printing and flow facts.

A program is a set of class files.  Each method body is a partial map from
addresses to instructions; the successor of address ``i`` is the least
address strictly greater than ``i``.

Example::

    class A {
      fields:
      methods:
        void m(A other) {
          0: load other
          1: monitorenter
          2: load other
          3: monitorexit
          4: return
        }
    }
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple

import networkx as nx

PRIMITIVE_TYPES = ("int", "top")
RETURN_ONLY_TYPES = ("void",)

# Instructions with a variable / address / class / field / method operand.
VAR_OPS = ("load", "store")
JUMP_OPS = ("if", "goto")
CLASS_OPS = ("new", "start")
FIELD_OPS = ("putfield", "getfield")
NULLARY_OPS = ("inc", "pop", "push", "dup", "sub", "monitorenter", "monitorexit", "return")
# invokespecial is invokevirtual without the void result on the stack, as in
# the JVM listing of the Network example (``dup; invokespecial init; astore``).
INVOKE_OPS = ("invokevirtual", "invokespecial")
ALL_OPS = NULLARY_OPS + VAR_OPS + JUMP_OPS + CLASS_OPS + FIELD_OPS + INVOKE_OPS

# Sugared forms of the Network listing.
ALIASES = {
    "aload": "load",
    "iload": "load",
    "astore": "store",
    "istore": "store",
    "ifne": "if",
    "isub": "sub",
}


class AssemblyError(ValueError):
    """Syntax or validation error in an assembly source."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class FieldRef:
    cls: str
    name: str
    type: str

    def __str__(self) -> str:
        return f"{self.cls}.{self.name}:{self.type}"


@dataclass(frozen=True)
class MethodRef:
    cls: str
    name: str
    params: Tuple[str, ...]

    @property
    def key(self) -> str:
        return f"{self.cls}.{self.name}"

    def __str__(self) -> str:
        return f"{self.cls}.{self.name}({','.join(self.params)})"


@dataclass(frozen=True)
class Instr:
    op: str
    arg: object = None

    def __str__(self) -> str:
        return self.op if self.arg is None else f"{self.op} {self.arg}"


@dataclass
class MethodDef:
    cls: str
    name: str
    return_type: str
    params: Tuple[str, ...]
    param_names: Tuple[str, ...]
    body: Dict[int, Instr]
    line: int = 0

    @property
    def key(self) -> str:
        return f"{self.cls}.{self.name}"

    @property
    def is_constructor(self) -> bool:
        return self.name == "init"

    def addresses(self) -> List[int]:
        return sorted(self.body)

    def next_address(self, i: int) -> Optional[int]:
        later = [a for a in self.body if a > i]
        return min(later) if later else None


@dataclass
class ClassDef:
    name: str
    fields: List[Tuple[str, str]] = field(default_factory=list)
    methods: Dict[str, MethodDef] = field(default_factory=dict)

    def field_type(self, name: str) -> Optional[str]:
        for f, t in self.fields:
            if f == name:
                return t
        return None


@dataclass
class ClassTable:
    classes: Dict[str, ClassDef] = field(default_factory=dict)

    def method(self, key: str) -> MethodDef:
        cls, _, name = key.rpartition(".")
        try:
            return self.classes[cls].methods[name]
        except KeyError:
            raise KeyError(f"unknown method {key}") from None

    def methods(self) -> Iterator[MethodDef]:
        for cname in sorted(self.classes):
            c = self.classes[cname]
            for mname in sorted(c.methods):
                yield c.methods[mname]

    def has_run(self, cls: str) -> bool:
        return cls in self.classes and "run" in self.classes[cls].methods


# ---------------------------------------------------------------- lexing

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>//[^\n]*)"
    r"|(?P<num>\d+)|(?P<name>[A-Za-z_$][A-Za-z0-9_$]*)|(?P<punct>[{}():,.])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> List[_Tok]:
    toks = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise AssemblyError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.pos = 0

    def peek(self, k: int = 0) -> _Tok:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> _Tok:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str, tok: Optional[_Tok] = None) -> AssemblyError:
        tok = tok or self.peek()
        return AssemblyError(message, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        tok = self.next()
        if tok.text != text:
            raise self.error(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok)
        return tok

    def name(self) -> _Tok:
        tok = self.next()
        if tok.kind != "name":
            raise self.error(f"expected a name, found {tok.text or 'end of input'!r}", tok)
        return tok

    def number(self) -> int:
        tok = self.next()
        if tok.kind != "num":
            raise self.error(f"expected an address, found {tok.text or 'end of input'!r}", tok)
        return int(tok.text)

    # -- grammar

    def program(self) -> Tuple[ClassTable, Dict[object, _Tok]]:
        table = ClassTable()
        where: Dict[object, _Tok] = {}
        while self.peek().kind != "eof":
            c = self.klass(where)
            if c.name in table.classes:
                raise self.error(f"duplicate class {c.name}", where[c.name])
            table.classes[c.name] = c
        return table, where

    def klass(self, where) -> ClassDef:
        kw = self.name()
        if kw.text != "class":
            raise self.error("expected 'class'", kw)
        tok = self.name()
        c = ClassDef(tok.text)
        where[c.name] = tok
        self.expect("{")
        if self.peek().text == "fields":
            self.next()
            self.expect(":")
            while self.peek().kind == "name" and self.peek(1).text == ":":
                if self.peek().text == "methods":
                    break
                ftok = self.name()
                self.expect(":")
                ftype = self.name()
                if c.field_type(ftok.text) is not None:
                    raise self.error(f"duplicate field {c.name}.{ftok.text}", ftok)
                c.fields.append((ftok.text, ftype.text))
                where[(c.name, ftok.text)] = ftype
        if self.peek().text == "methods":
            self.next()
            self.expect(":")
            while self.peek().text != "}":
                m = self.method(c.name)
                if m.name in c.methods:
                    raise self.error(f"duplicate method {c.name}.{m.name} (overloading is not supported)")
                c.methods[m.name] = m
        self.expect("}")
        return c

    def method(self, cls: str) -> MethodDef:
        ret = self.name()
        mtok = self.name()
        self.expect("(")
        params: List[str] = []
        names: List[str] = []
        while self.peek().text != ")":
            params.append(self.name().text)
            names.append(self.name().text if self.peek().kind == "name" else f"p{len(params)}")
            if self.peek().text == ",":
                self.next()
        self.expect(")")
        if len(set(names)) != len(names) or "this" in names:
            raise self.error(f"bad parameter names in {cls}.{mtok.text}", mtok)
        self.expect("{")
        body: Dict[int, Instr] = {}
        while self.peek().text != "}":
            atok = self.peek()
            addr = self.number()
            self.expect(":")
            if addr in body:
                raise self.error(f"duplicate address {addr}", atok)
            body[addr] = self.instr(names)
        self.expect("}")
        m = MethodDef(cls, mtok.text, ret.text, tuple(params), tuple(names), body, mtok.line)
        m.line = mtok.line
        return m

    def instr(self, param_names: List[str]) -> Instr:
        tok = self.name()
        op = ALIASES.get(tok.text, tok.text)
        if op not in ALL_OPS:
            raise self.error(f"unknown instruction {tok.text!r}", tok)
        if op in NULLARY_OPS:
            return Instr(op)
        if op in VAR_OPS:
            vt = self.next()
            if vt.kind == "num":
                slot = int(vt.text)
                if slot == 0:
                    return Instr(op, "this")
                if slot <= len(param_names):
                    return Instr(op, param_names[slot - 1])
                return Instr(op, f"v{slot}")
            if vt.kind != "name":
                raise self.error("expected a variable", vt)
            return Instr(op, vt.text)
        if op in JUMP_OPS:
            return Instr(op, self.number())
        if op in CLASS_OPS:
            return Instr(op, self.name().text)
        cls = self.name().text
        self.expect(".")
        member = self.name().text
        if op in FIELD_OPS:
            self.expect(":")
            return Instr(op, FieldRef(cls, member, self.name().text))
        self.expect("(")
        types: List[str] = []
        while self.peek().text != ")":
            types.append(self.name().text)
            if self.peek().text == ",":
                self.next()
        self.expect(")")
        return Instr(op, MethodRef(cls, member, tuple(types)))


# ------------------------------------------------------------ validation


def _check_type(table: ClassTable, t: str, tok: Optional[_Tok], allow_void: bool = False) -> None:
    if t in PRIMITIVE_TYPES or (allow_void and t in RETURN_ONLY_TYPES) or t in table.classes:
        return
    raise AssemblyError(f"undeclared class {t}", tok.line if tok else 0, tok.col if tok else 0)


def _validate(table: ClassTable, where: Dict[object, _Tok]) -> None:
    deps = nx.DiGraph()
    for c in table.classes.values():
        deps.add_node(c.name)
        for f, t in c.fields:
            _check_type(table, t, where.get((c.name, f)))
            if t in table.classes:
                deps.add_edge(c.name, t)
    try:
        cycle = nx.find_cycle(deps)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        tok = where.get(cycle[0][0])
        raise AssemblyError(
            "recursive class type: " + " -> ".join([e[0] for e in cycle] + [cycle[0][0]]),
            tok.line if tok else 0,
        )
    for m in table.methods():
        _validate_method(table, m)


def _validate_method(table: ClassTable, m: MethodDef) -> None:
    def fail(msg: str) -> AssemblyError:
        return AssemblyError(f"{m.key}: {msg}", m.line)

    for t in m.params:
        if t not in PRIMITIVE_TYPES and t not in table.classes:
            raise fail(f"undeclared class {t}")
    if m.return_type not in PRIMITIVE_TYPES + RETURN_ONLY_TYPES and m.return_type not in table.classes:
        raise fail(f"undeclared class {m.return_type}")
    if 0 not in m.body:
        raise fail("missing address 0")
    for i, ins in m.body.items():
        if ins.op in JUMP_OPS and ins.arg not in m.body:
            raise fail(f"jump to missing address {ins.arg} at {i}")
        if ins.op not in ("goto", "return") and m.next_address(i) is None:
            raise fail(f"instruction at {i} falls off the end of the body")
        if ins.op in CLASS_OPS and ins.arg not in table.classes:
            raise fail(f"undeclared class {ins.arg} at {i}")
        if ins.op == "start" and not table.has_run(ins.arg):
            raise fail(f"start on class {ins.arg} without run at {i}")
        if ins.op in FIELD_OPS:
            ref: FieldRef = ins.arg
            if ref.cls not in table.classes:
                raise fail(f"undeclared class {ref.cls} at {i}")
            declared = table.classes[ref.cls].field_type(ref.name)
            if declared is None:
                raise fail(f"undeclared field {ref.cls}.{ref.name} at {i}")
            if declared != ref.type:
                raise fail(f"field {ref.cls}.{ref.name} has type {declared}, not {ref.type}")
        if ins.op in INVOKE_OPS:
            ref: MethodRef = ins.arg
            if ref.cls not in table.classes:
                raise fail(f"undeclared class {ref.cls} at {i}")
            target = table.classes[ref.cls].methods.get(ref.name)
            if target is None:
                raise fail(f"undeclared method {ref.key} at {i}")
            if target.params != ref.params:
                raise fail(f"signature mismatch for {ref} at {i}")


def parse_program(text: str) -> ClassTable:
    """Parse and validate an assembly source."""
    table, where = _Parser(text).program()
    _validate(table, where)
    return table


def print_program(table: ClassTable) -> str:
    """Render a class table back to assembly; ``parse_program`` inverts it."""
    out: List[str] = []
    for cname in sorted(table.classes):
        c = table.classes[cname]
        out.append(f"class {c.name} {{")
        out.append("  fields:")
        out.extend(f"    {f} : {t}" for f, t in c.fields)
        out.append("  methods:")
        for mname in sorted(c.methods):
            m = c.methods[mname]
            params = ", ".join(f"{t} {n}" for t, n in zip(m.params, m.param_names))
            out.append(f"    {m.return_type} {m.name}({params}) {{")
            out.extend(f"      {a}: {m.body[a]}" for a in m.addresses())
            out.append("    }")
        out.append("}")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------ flow facts


@dataclass
class FlowFacts:
    cfg: Dict[str, Dict[int, Tuple[int, ...]]]
    in_loop: Dict[str, FrozenSet[int]]
    call_graph: nx.DiGraph
    call_sites: Dict[Tuple[str, int], str]
    recursive: FrozenSet[str]
    many_methods: FrozenSet[str]

    def sccs(self) -> List[List[str]]:
        """Call-graph SCCs in reverse topological order (callees first)."""
        cond = nx.condensation(self.call_graph)
        order = list(reversed(list(nx.topological_sort(cond))))
        return [sorted(cond.nodes[n]["members"]) for n in order]

    def same_scc(self, a: str, b: str) -> bool:
        """True iff ``a`` and ``b`` call each other (directly or not)."""
        if a == b:
            return a in self.recursive
        return nx.has_path(self.call_graph, a, b) and nx.has_path(self.call_graph, b, a)


def successors(m: MethodDef, i: int) -> Tuple[int, ...]:
    ins = m.body[i]
    if ins.op == "return":
        return ()
    if ins.op == "goto":
        return (ins.arg,)
    nxt = m.next_address(i)
    succ = () if nxt is None else (nxt,)
    if ins.op == "if" and ins.arg not in succ:
        succ = succ + (ins.arg,)
    return succ


def flow_facts(table: ClassTable) -> FlowFacts:
    cfg: Dict[str, Dict[int, Tuple[int, ...]]] = {}
    in_loop: Dict[str, FrozenSet[int]] = {}
    calls = nx.DiGraph()
    call_sites: Dict[Tuple[str, int], str] = {}
    for m in table.methods():
        calls.add_node(m.key)
        edges = {i: successors(m, i) for i in m.addresses()}
        cfg[m.key] = edges
        g = nx.DiGraph()
        g.add_nodes_from(edges)
        g.add_edges_from((i, j) for i, js in edges.items() for j in js)
        looping = set()
        for comp in nx.strongly_connected_components(g):
            if len(comp) > 1 or any(g.has_edge(v, v) for v in comp):
                looping |= comp
        in_loop[m.key] = frozenset(looping)
        for i, ins in m.body.items():
            if ins.op in INVOKE_OPS:
                callee = ins.arg.key
            elif ins.op == "start":
                callee = f"{ins.arg}.run"
            else:
                continue
            call_sites[(m.key, i)] = callee
            calls.add_edge(m.key, callee)
    recursive = set()
    for comp in nx.strongly_connected_components(calls):
        if len(comp) > 1 or any(calls.has_edge(v, v) for v in comp):
            recursive |= comp
    # A callee of a site that may run many times runs many times itself.
    many = set(recursive)
    for (caller, i), callee in call_sites.items():
        if i in in_loop[caller]:
            many.add(callee)
    frontier = list(many)
    while frontier:
        m = frontier.pop()
        for callee in calls.successors(m):
            if callee not in many:
                many.add(callee)
                frontier.append(callee)
    return FlowFacts(cfg, in_loop, calls, call_sites, frozenset(recursive), frozenset(many))


def executed_once(facts: FlowFacts, method: str, i: int) -> bool:
    """True iff address ``i`` of ``method`` runs at most once per invocation context."""
    if method not in facts.cfg or i not in facts.cfg[method]:
        raise KeyError(f"unknown address {method}@{i}")
    return method not in facts.many_methods and i not in facts.in_loop[method]
