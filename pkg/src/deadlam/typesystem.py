"""Behavioural type inference for JVML_d methods.

Each method body is abstractly interpreted over symbolic names.  The state at
an address records the environment (names to flattened types), the frame,
the operand stack, the sequence of held locks (most recent first) and the
sets of threads spawned once or many times.  The lam of a method is the sum
over its addresses of the per-address dependencies; method types are
computed by a fixpoint over the call graph, callees first.

The analysed thread of every method is the formal ``$t``; ``$u`` is the last
lock its caller acquired and the base of the lock sequence.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .frontend import ClassTable, FieldRef, FlowFacts, Instr, MethodDef, MethodRef, executed_once, flow_facts
from .lam import (
    INT,
    TOP,
    ZERO,
    Dep,
    Invoke,
    Lam,
    LamDef,
    LamProgram,
    Leaf,
    Node,
    SType,
    atoms,
    build_run_def,
    conj,
    disj,
    free_names,
    lock_name,
    lock_owner,
    match,
    nu,
    run_function,
    stype_names,
)

log = logging.getLogger(__name__)

THREAD = "$t"
LAST_LOCK = "$u"

# Abstract values that are not object names.
TOPV = "⊤"
INTV = "int"
VOID = "void"
NON_NAMES = (TOPV, INTV, VOID)


class TypingError(ValueError):
    """A typing failure, located at a method address."""

    def __init__(self, method: str, address: Optional[int], message: str):
        self.method = method
        self.address = address
        self.message = message
        where = f"{method}@{address}" if address is not None else method
        super().__init__(f"{where}: {message}")

    def record(self) -> dict:
        return {"method": self.method, "address": self.address, "message": self.message}


@dataclass(frozen=True)
class Flat:
    """Flattened object type: class plus field values (names, ``int`` or ``⊤``)."""

    cls: str
    fields: Tuple[Tuple[str, str], ...]

    def get(self, f: str) -> str:
        for k, v in self.fields:
            if k == f:
                return v
        raise KeyError(f)

    def set(self, f: str, value: str) -> "Flat":
        return Flat(self.cls, tuple((k, value if k == f else v) for k, v in self.fields))


Env = Mapping[str, Flat]


@dataclass(frozen=True)
class AbstractState:
    gamma: Mapping[str, Flat]
    frame: Mapping[str, str]
    stack: Tuple[str, ...]
    locks: Tuple[str, ...]
    once: FrozenSet[str] = frozenset()
    many: FrozenSet[str] = frozenset()
    aliases: Mapping[str, FrozenSet[str]] = field(default_factory=dict)
    # calls whose threads may outlive them without being exported
    live: Tuple[Invoke, ...] = ()

    def push(self, v: str) -> "AbstractState":
        return replace(self, stack=(v,) + self.stack)

    def alternatives(self, v: str) -> FrozenSet[str]:
        return self.aliases.get(v, frozenset({v}))


def is_name(v: str) -> bool:
    return v not in NON_NAMES


def typeof(gamma: Env, a: str) -> str:
    """The class of an object name."""
    if a not in gamma:
        raise KeyError(f"name {a} is not an object in the environment")
    return gamma[a].cls


def constr(gamma: Env, a: str) -> SType:
    """Structured type of a name: the tree of its fields, expanded through ``gamma``."""
    if a == INTV:
        return INT
    if not is_name(a):
        return TOP
    if a not in gamma:
        raise KeyError(f"unbound name {a}")
    flat = gamma[a]
    return Node(a, tuple((f, constr(gamma, v)) for f, v in flat.fields), flat.cls)


def destr(rho: SType) -> Dict[str, Flat]:
    """Environment fragment described by a structured type."""
    out: Dict[str, Flat] = {}

    def walk(r: SType) -> str:
        if isinstance(r, Leaf):
            return INTV if r == INT else TOPV
        if not isinstance(r, Node) or r.cls is None:
            raise ValueError(f"cannot flatten {r}: variable leaf or missing class")
        flat = Flat(r.cls, tuple((f, walk(v)) for f, v in r.fields))
        if out.get(r.root, flat) != flat:
            raise ValueError(f"name {r.root} has two shapes in {rho}")
        out[r.root] = flat
        return r.root

    walk(rho)
    return out


def fresh_names(method: str, i: int, k: int) -> Tuple[str, ...]:
    """Deterministic names for address ``i``; ``k`` names, prefix-stable."""
    return tuple(f"{method}#{i}#{j}" for j in range(1, k + 1))


class NameSupply:
    """Keyed allocation on top of :func:`fresh_names`.

    Names imported through a call inside a recursive cycle are keyed by the
    allocation site they stem from, which keeps the vocabulary finite.
    """

    def __init__(self) -> None:
        self._keys: Dict[Tuple[str, int, str], Dict[object, int]] = {}
        self.base: Dict[str, str] = {}

    def keyed(self, method: str, i: int, key: object, kind: str = "") -> str:
        reg = self._keys.setdefault((method, i, kind), {})
        j = reg.setdefault(key, len(reg) + 1)
        if kind:
            return f"{method}#{i}#{kind}{j}"
        return fresh_names(method, i, j)[-1]

    def summary(self, method: str, i: int, key: object) -> str:
        return self.keyed(method, i, key, kind="s")

    def imported(self, method: str, i: int, callee_name: str, recursive: bool) -> str:
        if recursive:
            origin = self.base.get(callee_name, callee_name)
            name = self.keyed(method, i, ("rec", origin))
            self.base[name] = origin
        else:
            name = self.keyed(method, i, ("ext", callee_name))
        return name


@dataclass(frozen=True)
class MethodBehavior:
    """One behavioural class table entry."""

    method: str
    carrier: SType
    args: Tuple[SType, ...]
    return_value: SType
    carrier_after: SType
    once: Tuple[str, ...] = ()
    many: Tuple[str, ...] = ()
    extra: Tuple[SType, ...] = ()
    binder: Tuple[str, ...] = ()
    aliases: Tuple[Tuple[str, FrozenSet[str]], ...] = ()
    body: Lam = ZERO
    residual: bool = False
    thread: str = THREAD
    last_lock: str = LAST_LOCK

    @property
    def params(self) -> Tuple[SType, ...]:
        return (self.carrier,) + self.args + (Node(self.thread), Node(self.last_lock))

    @property
    def ret(self) -> Tuple[SType, ...]:
        if not self.binder:
            return ()
        return (self.return_value, self.carrier_after) + self.extra

    def lam_def(self) -> LamDef:
        return LamDef(self.method, self.params, self.ret, self.body)


def formal_tree(table: ClassTable, cls: str, name: str, blank: bool = False) -> SType:
    """Formal structured type of a class; ``blank`` leaves all fields at top."""
    fields = []
    for f, t in table.classes[cls].fields:
        if blank or t == "top":
            fields.append((f, TOP))
        elif t == "int":
            fields.append((f, INT))
        else:
            fields.append((f, formal_tree(table, t, f"{name}.{f}")))
    return Node(name, tuple(fields), cls)


def _type_tree(table: ClassTable, t: str, name: str) -> SType:
    if t == "int":
        return INT
    if t == "top":
        return TOP
    return formal_tree(table, t, name)


def initial_behavior(table: ClassTable, m: MethodDef) -> MethodBehavior:
    carrier = formal_tree(table, m.cls, "this", blank=m.is_constructor)
    args = tuple(_type_tree(table, t, n) for t, n in zip(m.params, m.param_names))
    rv = INT if m.return_type == "int" else TOP
    return MethodBehavior(m.key, carrier, args, rv, carrier)


# ----------------------------------------------------------------- joins


class _Joiner:
    def __init__(self, supply: NameSupply, method: str, address: int, a: AbstractState, b: AbstractState):
        self.supply = supply
        self.method = method
        self.address = address
        self.a = a
        self.b = b
        self.gamma: Dict[str, Flat] = dict(a.gamma)
        for k, v in b.gamma.items():
            self.gamma.setdefault(k, v)
        self.aliases: Dict[str, FrozenSet[str]] = dict(a.aliases)
        for k, v in b.aliases.items():
            self.aliases[k] = self.aliases.get(k, frozenset()) | v

    def fail(self, msg: str) -> TypingError:
        return TypingError(self.method, self.address, msg)

    def alts(self, v: str) -> FrozenSet[str]:
        return leaves(self.aliases, v) or frozenset({v})

    def value(self, x: str, y: str, key: object) -> str:
        if x == y:
            return x
        if not (is_name(x) and is_name(y)):
            return INTV if x == y == INTV else TOPV
        cx, cy = self.gamma[x].cls, self.gamma[y].cls
        if cx != cy:
            raise self.fail(f"cannot join objects of classes {cx} and {cy}")
        s = self.supply.summary(self.method, self.address, key)
        members = (self.alts(x) | self.alts(y)) - {s}
        self.aliases[s] = self.aliases.get(s, frozenset()) | members
        flats = [self.gamma[n] for n in sorted(self.aliases[s]) if n in self.gamma]
        flat = flats[0]
        for other in flats[1:]:
            flat = self.flat(flat, other, ("field", s))
        self.gamma[s] = flat
        return s

    def flat(self, x: Flat, y: Flat, key: object) -> Flat:
        if x == y:
            return x
        if x.cls != y.cls:
            raise self.fail(f"cannot join objects of classes {x.cls} and {y.cls}")
        return Flat(x.cls, tuple((f, self.value(v, w, key + (f,))) for (f, v), (_, w) in zip(x.fields, y.fields)))

    def run(self) -> AbstractState:
        a, b = self.a, self.b
        if len(a.stack) != len(b.stack):
            raise self.fail(f"stack depths {len(a.stack)} and {len(b.stack)} differ at a join")
        if a.locks != b.locks:
            raise self.fail("unstructured locking across join: lock sequences differ")
        for n in sorted(set(a.gamma) & set(b.gamma)):
            if a.gamma[n] != b.gamma[n]:
                self.gamma[n] = self.flat(a.gamma[n], b.gamma[n], ("env", n))
        frame = {}
        for x in sorted(set(a.frame) & set(b.frame)):
            frame[x] = self.value(a.frame[x], b.frame[x], ("var", x))
        stack = tuple(self.value(v, w, ("stack", k)) for k, (v, w) in enumerate(zip(a.stack, b.stack)))
        many = a.many | b.many
        once = (a.once | b.once) - many
        live = tuple(sorted(set(a.live) | set(b.live), key=str))
        return AbstractState(self.gamma, frame, stack, a.locks, once, many, self.aliases, live)


def merge(states: Sequence[AbstractState], supply: NameSupply, method: str, address: int) -> AbstractState:
    """Join abstract states reaching one address."""
    if not states:
        raise ValueError("merge needs at least one state")
    out = states[0]
    for s in states[1:]:
        if s != out:
            out = _Joiner(supply, method, address, out, s).run()
    return out


# ------------------------------------------------------------- the rules


@dataclass
class _Context:
    table: ClassTable
    facts: FlowFacts
    bct: Dict[str, MethodBehavior]
    supply: NameSupply
    scc_of: Dict[str, int]
    method: MethodDef


def _pop(ctx: _Context, i: int, state: AbstractState, n: int = 1) -> Tuple[List[str], AbstractState]:
    if len(state.stack) < n:
        raise TypingError(ctx.method.key, i, "stack underflow")
    return list(state.stack[:n]), replace(state, stack=state.stack[n:])


def _object(ctx: _Context, i: int, state: AbstractState, v: str, cls: Optional[str] = None) -> str:
    if not is_name(v) or v not in state.gamma:
        raise TypingError(ctx.method.key, i, f"expected an object, found {v}")
    if cls is not None and state.gamma[v].cls != cls:
        raise TypingError(ctx.method.key, i, f"typeof mismatch: {v} has class {state.gamma[v].cls}, expected {cls}")
    return v


def _int(ctx: _Context, i: int, v: str) -> None:
    if v not in (INTV, TOPV):
        raise TypingError(ctx.method.key, i, f"expected an int, found {v}")


def _map_tree(rho: SType, mapping: Mapping[str, Optional[str]]) -> SType:
    """Rename a callee tree into the caller; names bound to nothing become top."""
    if isinstance(rho, Node):
        target = mapping.get(rho.root, rho.root)
        if target is None:
            return TOP
        return Node(target, tuple((f, _map_tree(v, mapping)) for f, v in rho.fields), rho.cls)
    return rho


def step_type(ctx: _Context, i: int, state: AbstractState) -> Tuple[List[Tuple[int, AbstractState]], Lam]:
    """Type the instruction at ``i``: successor states and the lam contribution."""
    m = ctx.method
    ins: Instr = m.body[i]
    op = ins.op
    nxt = m.next_address(i)
    err = lambda msg: TypingError(m.key, i, msg)  # noqa: E731

    def then(s: AbstractState) -> List[Tuple[int, AbstractState]]:
        if nxt is None:
            raise err("no successor address")
        return [(nxt, s)]

    if op == "push":
        return then(state.push(INTV)), ZERO
    if op == "inc":
        (v,), s = _pop(ctx, i, state)
        _int(ctx, i, v)
        return then(s.push(INTV)), ZERO
    if op == "sub":
        (v, w), s = _pop(ctx, i, state, 2)
        _int(ctx, i, v)
        _int(ctx, i, w)
        return then(s.push(INTV)), ZERO
    if op == "pop":
        _, s = _pop(ctx, i, state)
        return then(s), ZERO
    if op == "dup":
        (v,), _ = _pop(ctx, i, state)
        return then(state.push(v)), ZERO
    if op == "load":
        if ins.arg not in state.frame:
            raise err(f"variable {ins.arg} is not initialised")
        return then(state.push(state.frame[ins.arg])), ZERO
    if op == "store":
        (v,), s = _pop(ctx, i, state)
        return then(replace(s, frame={**s.frame, ins.arg: v})), ZERO
    if op == "if":
        (v,), s = _pop(ctx, i, state)
        _int(ctx, i, v)
        succ = then(s)
        if ins.arg != nxt:
            succ.append((ins.arg, s))
        return succ, ZERO
    if op == "goto":
        return [(ins.arg, state)], ZERO
    if op == "new":
        (name,) = fresh_names(m.key, i, 1)
        flat = Flat(ins.arg, tuple((f, TOPV) for f, _ in ctx.table.classes[ins.arg].fields))
        s = replace(state, gamma={**state.gamma, name: flat})
        return then(s.push(name)), ZERO
    if op == "getfield":
        ref: FieldRef = ins.arg
        (a,), s = _pop(ctx, i, state)
        _object(ctx, i, s, a, ref.cls)
        return then(s.push(s.gamma[a].get(ref.name))), ZERO
    if op == "putfield":
        ref = ins.arg
        (v, a), s = _pop(ctx, i, state, 2)
        _object(ctx, i, s, a, ref.cls)
        if not (m.is_constructor and m.cls == ref.cls):
            raise err(f"putfield {ref} outside the constructor of {ref.cls} (fields are read-only)")
        if s.gamma[a].get(ref.name) != TOPV:
            raise err(f"field {ref.cls}.{ref.name} of {a} is already initialised")
        if is_name(v):
            _object(ctx, i, s, v, ref.type if ref.type not in ("int", "top") else None)
        gamma = {**s.gamma, a: s.gamma[a].set(ref.name, v)}
        return then(replace(s, gamma=gamma)), ZERO
    if op == "monitorenter":
        (a,), s = _pop(ctx, i, state)
        _object(ctx, i, s, a)
        dep = Dep(s.locks[0], a, THREAD)
        return then(replace(s, locks=(a,) + s.locks)), dep
    if op == "monitorexit":
        (a,), s = _pop(ctx, i, state)
        if len(s.locks) < 2 or s.locks[0] != a:
            raise err(f"monitorexit on {a} does not release the most recent lock")
        return then(replace(s, locks=s.locks[1:])), ZERO
    if op == "start":
        (t,), s = _pop(ctx, i, state)
        _object(ctx, i, s, t, ins.arg)
        if not ctx.table.has_run(ins.arg):
            raise err(f"start on class {ins.arg} without run")
        if executed_once(ctx.facts, m.key, i) and t not in s.many:
            s = replace(s, once=s.once | {t})
        else:
            s = replace(s, once=s.once - {t}, many=s.many | {t})
        return then(s), ZERO
    if op == "return":
        if state.locks != (LAST_LOCK,):
            raise err("unbalanced monitors at return")
        if m.return_type != "void":
            if not state.stack:
                raise err("return without a value")
        return [], ZERO
    if op in ("invokevirtual", "invokespecial"):
        return _invoke(ctx, i, state, ins.arg, then, keep_void=op == "invokevirtual")
    raise err(f"unsupported instruction {op}")


def _invoke(ctx: _Context, i: int, state: AbstractState, ref: MethodRef, then, keep_void: bool = True):
    m = ctx.method
    callee_def = ctx.table.method(ref.key)
    n = len(ref.params)
    vals, s = _pop(ctx, i, state, n + 1)
    receiver = vals[n]
    args = list(reversed(vals[:n]))
    _object(ctx, i, s, receiver, ref.cls)
    gamma = s.gamma
    actual_args = []
    for v, t in zip(args, ref.params):
        if t not in ("int", "top") and is_name(v):
            _object(ctx, i, s, v, t)
        actual_args.append(constr(gamma, v))
    beh = ctx.bct[ref.key]
    top_lock = s.locks[0]
    actuals = (constr(gamma, receiver),) + tuple(actual_args) + (Node(THREAD), Node(top_lock))
    names: Dict[str, Optional[str]] = {}
    try:
        for p, a in zip(beh.params, actuals):
            match(p, a, names, {})
    except ValueError as e:
        raise TypingError(m.key, i, str(e)) from None
    recursive = ctx.scc_of[ref.key] == ctx.scc_of[m.key]
    mapping: Dict[str, Optional[str]] = dict(names)
    # inside a recursive cycle only the return value and the carrier are
    # imported; spawned threads stay with the call, which is kept live
    exported = beh.ret[:2] if recursive else beh.ret
    visible = {n for r in exported for n in stype_names(r)}
    for b in beh.binder:
        if b in visible:
            mapping[b] = ctx.supply.imported(m.key, i, b, recursive)
    ret = tuple(_map_tree(r, mapping) for r in exported)
    trees = [r for r in ret if isinstance(r, Node)]
    if not ret:
        # no new names; the carrier may still have been completed by the callee
        after = _map_tree(beh.carrier_after, mapping)
        if isinstance(after, Node) and after != actuals[0]:
            trees.append(after)
    fragments: Dict[str, Flat] = {}
    clashes: List[Tuple[str, Flat]] = []
    for r in trees:
        try:
            frag = destr(r)
        except ValueError as e:
            raise TypingError(m.key, i, str(e)) from None
        for k, v in frag.items():
            if fragments.setdefault(k, v) != v:
                clashes.append((k, v))
    new_gamma = {**gamma, **fragments}
    aliases = dict(s.aliases)
    if clashes:
        # a name folded over recursion depths stands for objects of several shapes
        joiner = _Joiner(ctx.supply, m.key, i, replace(s, gamma=new_gamma), replace(s, gamma=new_gamma))
        for k, v in clashes:
            joiner.gamma[k] = joiner.flat(joiner.gamma[k], v, ("import", k))
        new_gamma, aliases = joiner.gamma, joiner.aliases
    for b, members in beh.aliases:
        if mapping.get(b):
            _add_alias(aliases, mapping[b], (mapping[x] for x in members if mapping.get(x)))
    once, many = set(s.once), set(s.many)
    live = s.live
    if not recursive:
        spawned_once = [mapping[x] for x in beh.once if mapping.get(x)]
        spawned_many = [mapping[x] for x in beh.many if mapping.get(x)]
        if executed_once(ctx.facts, m.key, i):
            once.update(x for x in spawned_once if x not in many)
        else:
            many.update(spawned_once)
        many.update(spawned_many)
        once -= many
    rt = callee_def.return_type
    if rt == "void":
        pushed = VOID
    elif rt == "int":
        pushed = INTV
    elif rt == "top":
        pushed = TOPV
    else:
        rv = _map_tree(beh.return_value, mapping)
        pushed = rv.root if isinstance(rv, Node) else TOPV
    contribution = Invoke(ref.key, actuals, ret)
    if beh.residual or (recursive and (beh.once or beh.many)):
        live = tuple(sorted(set(live) | {contribution}, key=str))
    s = replace(s, gamma=new_gamma, aliases=aliases, once=frozenset(once), many=frozenset(many), live=live)
    if pushed != VOID or keep_void:
        s = s.push(pushed)
    return then(s), contribution


# ------------------------------------------------------- effective lams


def _chain(locks: Sequence[str]) -> List[Dep]:
    return [Dep(locks[k + 1], locks[k], THREAD) for k in range(len(locks) - 1)]


def leaves(aliases: Mapping[str, FrozenSet[str]], name: str) -> FrozenSet[str]:
    """Plain names a summary name stands for; cycles through summaries are cut."""
    out: Set[str] = set()
    seen = {name}
    todo = [name]
    while todo:
        for x in aliases.get(todo.pop(), ()):
            if x in seen:
                continue
            seen.add(x)
            if x in aliases:
                todo.append(x)
            else:
                out.add(x)
    return frozenset(out)


def _add_alias(aliases: Dict[str, FrozenSet[str]], name: str, members: Iterable[str]) -> None:
    flat: Set[str] = set()
    for x in members:
        flat |= leaves(aliases, x) if x in aliases else {x}
    flat.discard(name)
    if flat:
        aliases[name] = aliases.get(name, frozenset()) | flat


def _expand(term: Lam, state: AbstractState) -> List[Lam]:
    """Resolve summary names into the alternatives they stand for."""
    summaries = sorted(n for n in _names_of(term) if leaves(state.aliases, n))
    if not summaries:
        return [term]
    s = summaries[0]
    alts = leaves(state.aliases, s)
    out = []
    for alt in sorted(alts):
        out.extend(_expand(_replace_name(term, s, alt, state.gamma), state))
    return out


def _names_of(term: Lam) -> Set[str]:
    out: Set[str] = set()
    for a in atoms(term):
        if isinstance(a, Dep):
            out.update((a.holder, a.wanted))
        else:
            for r in a.args + a.ret:
                out.update(stype_names(r))
    return out


def _replace_tree(rho: SType, s: str, alt: str, gamma: Env) -> SType:
    if isinstance(rho, Node):
        if rho.root == s:
            return constr(gamma, alt)
        return Node(rho.root, tuple((f, _replace_tree(v, s, alt, gamma)) for f, v in rho.fields), rho.cls)
    return rho


def _replace_name(term: Lam, s: str, alt: str, gamma: Env) -> Lam:
    parts = []
    for a in (term.items if hasattr(term, "items") else (term,)):
        if isinstance(a, Dep):
            parts.append(Dep(alt if a.holder == s else a.holder, alt if a.wanted == s else a.wanted, a.thread))
        elif isinstance(a, Invoke):
            parts.append(Invoke(a.fn, tuple(_replace_tree(r, s, alt, gamma) for r in a.args),
                                tuple(_replace_tree(r, s, alt, gamma) for r in a.ret)))
        else:
            parts.append(a)
    return conj(*parts)


def effective_lam(state: AbstractState, contribution: Lam, table: Optional[ClassTable] = None) -> Lam:
    """Dependencies of one address: its contribution, held locks and live threads."""
    items: List[Lam] = [contribution, *_chain(state.locks), *state.live]
    for t in sorted(state.once):
        cls = typeof(state.gamma, t)
        items.append(Invoke(f"{cls}.run", (constr(state.gamma, t), Node(t), Node(lock_name(t)))))
    for t in sorted(state.many):
        cls = typeof(state.gamma, t)
        items.append(Invoke(run_function(cls), (constr(state.gamma, t),)))
    return disj(*_expand(conj(*items), state))


def _summands(term: Lam) -> List[Lam]:
    if term == ZERO:
        return []
    return list(term.items) if term.__class__.__name__ == "Or" else [term]


def _drop_subsumed(summands: Iterable[Lam]) -> List[Lam]:
    bags = []
    for t in summands:
        items = t.items if t.__class__.__name__ == "And" else (t,)
        bags.append((t, Counter(str(x) for x in items)))
    unique: Dict[str, Tuple[Lam, Counter]] = {}
    for t, bag in bags:
        unique.setdefault(str(t), (t, bag))
    kept = []
    vals = list(unique.values())
    for k, (t, bag) in enumerate(vals):
        subsumed = any(
            j != k and all(bag[x] <= other[x] for x in bag) and (bag != other or j < k)
            for j, (_, other) in enumerate(vals)
        )
        if not subsumed:
            kept.append(t)
    return kept


# ------------------------------------------------------------- inference


@dataclass
class MethodTyping:
    states: Dict[int, AbstractState]
    contributions: Dict[int, Lam]
    effective: Dict[int, Lam]
    behavior: MethodBehavior


def type_method(
    table: ClassTable,
    facts: FlowFacts,
    bct: Dict[str, MethodBehavior],
    supply: NameSupply,
    scc_of: Dict[str, int],
    m: MethodDef,
    max_visits: int = 10_000,
) -> MethodTyping:
    """One typing pass over a method body under the current BCT snapshot."""
    ctx = _Context(table, facts, bct, supply, scc_of, m)
    init = initial_behavior(table, m)
    gamma: Dict[str, Flat] = {}
    frame: Dict[str, str] = {"this": "this"}
    for rho in (init.carrier,) + init.args:
        if isinstance(rho, Node):
            gamma.update(destr(rho))
    for rho, name in zip(init.args, m.param_names):
        frame[name] = rho.root if isinstance(rho, Node) else (INTV if rho == INT else TOPV)
    start = AbstractState(gamma, frame, (), (LAST_LOCK,))
    states: Dict[int, AbstractState] = {0: start}
    work = [0]
    visits = 0
    exits: List[AbstractState] = []
    while work:
        i = min(work)
        work.remove(i)
        visits += 1
        if visits > max_visits:
            raise TypingError(m.key, i, "dataflow did not stabilise")
        succ, _ = step_type(ctx, i, states[i])
        for j, s in succ:
            old = states.get(j)
            new = s if old is None else merge([old, s], supply, m.key, j)
            if new != old:
                states[j] = new
                if j not in work:
                    work.append(j)
    contributions: Dict[int, Lam] = {}
    effective: Dict[int, Lam] = {}
    for i in sorted(states):
        _, contrib = step_type(ctx, i, states[i])
        contributions[i] = contrib
        effective[i] = effective_lam(states[i], contrib)
        if m.body[i].op == "return":
            exits.append(states[i])
    summands = [x for i in sorted(effective) for x in _summands(effective[i])]
    body_sum = disj(*_drop_subsumed(summands))
    behavior = _behavior(init, m, exits, body_sum, supply)
    return MethodTyping(states, contributions, effective, behavior)


def _behavior(init: MethodBehavior, m: MethodDef, exits: List[AbstractState], body: Lam,
              supply: NameSupply) -> MethodBehavior:
    formals = {n for rho in init.params for n in stype_names(rho)}
    if not exits:
        local = free_names(body) - formals
        local = {n for n in local if not (lock_owner(n) in formals)}
        return replace(init, body=nu(local, body))
    exit_state = merge(exits, supply, m.key, -1)
    g = exit_state.gamma
    if m.return_type in ("void", "top"):
        rv: SType = TOP
    elif m.return_type == "int":
        rv = INT
    else:
        rv = constr(g, exit_state.stack[0]) if exit_state.stack else TOP
    after = constr(g, "this")
    threads = sorted(exit_state.once | exit_state.many)
    extra = [constr(g, t) for t in threads]
    exported = set()
    for rho in [rv, after] + extra:
        exported.update(stype_names(rho))
    pending = sorted(n for n in exported if n in exit_state.aliases)
    seen_alias = set()
    aliases = []
    while pending:
        s = pending.pop()
        if s in seen_alias:
            continue
        seen_alias.add(s)
        members = exit_state.aliases[s]
        aliases.append((s, members))
        for x in sorted(members):
            if x not in exported and x in g:
                tree = constr(g, x)
                extra.append(tree)
                new = set(stype_names(tree))
                exported |= new
                pending.extend(n for n in new if n in exit_state.aliases)
    binder = tuple(sorted(exported - formals))
    behavior = replace(
        init,
        return_value=rv,
        carrier_after=after,
        once=tuple(sorted(exit_state.once)),
        many=tuple(sorted(exit_state.many)),
        extra=tuple(extra) if binder else (),
        binder=binder,
        aliases=tuple(sorted(aliases)),
        residual=bool(exit_state.live),
    )
    scope = formals | set(binder)
    local = {n for n in free_names(body) if n not in scope and lock_owner(n) not in scope}
    return replace(behavior, body=nu(local, body))


@dataclass
class Inference:
    bct: Dict[str, MethodBehavior]
    program: LamProgram
    typings: Dict[str, MethodTyping]
    iterations: Dict[str, int]
    entry: Optional[str]


def default_entry(table: ClassTable) -> str:
    mains = [m.key for m in table.methods() if m.name == "main"]
    if len(mains) != 1:
        raise TypingError("<program>", None, f"expected exactly one main method, found {len(mains)}; use an explicit entry")
    return mains[0]


def entry_lam(table: ClassTable, entry: str) -> Lam:
    """Invocation of the entry method by a root thread on fresh arguments."""
    m = table.method(entry)
    init = initial_behavior(table, m)
    rename = lambda rho: _prefix_tree(rho, "main$")  # noqa: E731
    args = tuple(rename(r) for r in (init.carrier,) + init.args)
    return Invoke(entry, args + (Node("main$t"), Node(lock_name("main$t"))))


def _prefix_tree(rho: SType, prefix: str) -> SType:
    if isinstance(rho, Node):
        return Node(prefix + rho.root, tuple((f, _prefix_tree(v, prefix)) for f, v in rho.fields), rho.cls)
    return rho


def infer_bct(
    table: ClassTable,
    facts: Optional[FlowFacts] = None,
    entry: Optional[str] = None,
    max_iterations: int = 50,
) -> Inference:
    """Infer the behavioural class table and the lam program of a class table."""
    facts = facts or flow_facts(table)
    supply = NameSupply()
    bct = {m.key: initial_behavior(table, m) for m in table.methods()}
    sccs = facts.sccs()
    scc_of = {k: n for n, comp in enumerate(sccs) for k in comp}
    typings: Dict[str, MethodTyping] = {}
    iterations: Dict[str, int] = {}
    for comp in sccs:
        comp = [k for k in comp if k in bct]
        for it in itertools.count(1):
            if it > max_iterations:
                raise TypingError(comp[0], None, f"no fixpoint after {max_iterations} iterations")
            changed = False
            for key in comp:
                typing = type_method(table, facts, bct, supply, scc_of, table.method(key))
                typings[key] = typing
                if typing.behavior != bct[key]:
                    bct[key] = typing.behavior
                    changed = True
            if not changed:
                for key in comp:
                    iterations[key] = it
                break
        log.debug("typed %s in %d iterations", comp, iterations[comp[0]] if comp else 0)
    program = LamProgram()
    for key in sorted(bct):
        program.defs[key] = bct[key].lam_def()
    for cname in sorted(table.classes):
        if table.has_run(cname):
            d = build_run_def(cname, formal_tree(table, cname, "this"))
            program.defs[d.name] = d
    if entry is None:
        try:
            entry = default_entry(table)
        except TypingError:
            entry = None
    if entry is not None:
        program.main = entry_lam(table, entry)
    program.validate()
    return Inference(bct, program, typings, iterations, entry)
