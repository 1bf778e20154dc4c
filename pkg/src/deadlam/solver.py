"""Circularity analysis of lam programs.

Function bodies are saturated into non-recursive summaries: starting from
empty bodies, every body is re-evaluated against the previous summaries,
transitively closed and projected onto its formal names, until nothing
changes.  The main lam is then expanded against the summaries and checked
for a pair ``(a,a)_✓`` in its closure.

Thread labels compose as follows: ``u∘u = u`` for a named thread ``u``,
anything else yields ``✓``.  In particular ``•∘• = ✓``: two anonymous
dependencies may come from different threads.  Self pairs ``(a,a)_t``
written in a body are reentrant acquisitions and are dropped; self pairs the
closure derives stand for real cycles and compose like any other pair.

Summaries assume pairwise distinct formals, so definitions are first copied
for every aliasing of their formals that some call actually uses.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from .lam import (
    BULLET,
    CHECK,
    ConjState,
    Dep,
    FreshNames,
    And,
    Invoke,
    Lam,
    LamDef,
    LamError,
    LamProgram,
    Nu,
    StateLimitError,
    Or,
    atoms,
    conj,
    disj,
    dnf,
    nu,
    freshen,
    instantiate,
    lock_owner,
    match,
    rename,
    rename_stype,
    substitute_name,
    term_names,
)

DepSet = FrozenSet[Dep]
Summary = Dict[str, FrozenSet[DepSet]]

# Marker standing for a circularity among names local to a function body,
# which projection would otherwise erase.
CYCLE_PREFIX = "⊥"

DEFAULT_MAX_STATES = 20_000
DEFAULT_MAX_ITERATIONS = 200


class SolverError(LamError):
    pass


def compose_label(u: str, v: str) -> str:
    return u if u == v and u != BULLET else CHECK


def reentrant(dep: Dep) -> bool:
    """A written ``(a,a)_t``: re-acquiring a held lock, which never blocks.

    Such pairs are dropped before closure.  Self pairs produced by the closure
    stand for a real cycle through other names and do compose.
    """
    return dep.holder == dep.wanted and dep.thread != CHECK


def _close(deps: Iterable[Dep]) -> Tuple[Set[Dep], Dict[Dep, Tuple[Dep, Dep]]]:
    closed: Set[Dep] = set(deps)
    parents: Dict[Dep, Tuple[Dep, Dep]] = {}
    by_holder: Dict[str, Set[Dep]] = defaultdict(set)
    by_wanted: Dict[str, Set[Dep]] = defaultdict(set)
    for d in closed:
        by_holder[d.holder].add(d)
        by_wanted[d.wanted].add(d)
    work = deque(sorted(closed))

    def add(new: Dep, left: Dep, right: Dep) -> None:
        if new not in closed:
            closed.add(new)
            parents[new] = (left, right)
            by_holder[new.holder].add(new)
            by_wanted[new.wanted].add(new)
            work.append(new)

    while work:
        d = work.popleft()
        for e in sorted(by_holder[d.wanted]):
            add(Dep(d.holder, e.wanted, compose_label(d.thread, e.thread)), d, e)
        for e in sorted(by_wanted[d.holder]):
            add(Dep(e.holder, d.wanted, compose_label(e.thread, d.thread)), e, d)
    return closed, parents


def closure(state: ConjState) -> ConjState:
    """Least superset of the dependencies closed under label composition."""
    if state.pending:
        raise SolverError("closure expects a state without pending invocations")
    closed, _ = _close(state.deps)
    return ConjState(frozenset(closed))


def _witness(dep: Dep, parents: Dict[Dep, Tuple[Dep, Dep]]) -> List[Dep]:
    if dep not in parents:
        return [dep]
    left, right = parents[dep]
    return _witness(left, parents) + _witness(right, parents)


def circularities(deps: Iterable[Dep]) -> List[List[Dep]]:
    """Every ``(a,a)_✓`` of the closure, each with a chain of original dependencies."""
    closed, parents = _close(deps)
    out = []
    for d in sorted(closed):
        if d.holder == d.wanted and d.thread == CHECK:
            out.append(_witness(d, parents))
    return out


def circular_components(deps: Iterable[Dep]) -> List[Tuple[FrozenSet[str], List[Dep]]]:
    """Circular names grouped by mutual reachability, each with one witness.

    One wait cycle yields ``(a,a)_✓`` for every name ``a`` on it; grouping
    counts it once, independently of how its names are spelled.
    """
    closed, parents = _close(deps)
    circular = sorted(d.holder for d in closed if d.holder == d.wanted and d.thread == CHECK)
    reach = {(d.holder, d.wanted) for d in closed}
    groups: List[List[str]] = []
    for a in circular:
        for g in groups:
            if (a, g[0]) in reach and (g[0], a) in reach:
                g.append(a)
                break
        else:
            groups.append([a])
    out = []
    for g in groups:
        witnesses = [_witness(Dep(a, a, CHECK), parents) for a in g]
        out.append((frozenset(g), min(witnesses, key=lambda w: (len(w), [str(d) for d in w]))))
    return out


def has_circularity(state: ConjState) -> Optional[List[Dep]]:
    """A witness cycle if the closure holds some ``(a,a)_✓``, else ``None``."""
    found = circularities(state.deps)
    if not found:
        return None
    return min(found, key=lambda w: (len(w), [str(d) for d in w]))


def project(state: ConjState, formals: Iterable[str]) -> ConjState:
    """Drop dependencies on non-formal names; anonymise non-formal threads."""
    if state.pending:
        raise SolverError("projection expects a state without pending invocations")
    return ConjState(_project(state.deps, frozenset(formals)))


def _allowed(name: str, formals: FrozenSet[str]) -> bool:
    if name in formals or name.startswith(CYCLE_PREFIX):
        return True
    owner = lock_owner(name)
    return owner is not None and owner in formals


def cycle_marker(fn: str) -> Dep:
    name = CYCLE_PREFIX + fn
    return Dep(name, name, CHECK)


def _project(deps: Iterable[Dep], formals: FrozenSet[str], fn: str = "") -> DepSet:
    out = set()
    for d in deps:
        if not (_allowed(d.holder, formals) and _allowed(d.wanted, formals)):
            if d.holder == d.wanted and d.thread == CHECK:
                out.add(cycle_marker(fn))
            continue
        label = d.thread if d.thread in formals or d.thread == CHECK else BULLET
        out.add(Dep(d.holder, d.wanted, label))
    return frozenset(out)


def reduce_state(s: DepSet) -> DepSet:
    """Drop ``(a,b)_t`` when ``(a,b)_✓`` is present.

    Every composition through ``(a,b)_t`` yields ``✓`` through ``(a,b)_✓``,
    so the labelled pair adds nothing to any circularity.
    """
    checked = {(d.holder, d.wanted) for d in s if d.thread == CHECK}
    return frozenset(d for d in s if d.thread == CHECK or (d.holder, d.wanted) not in checked)


def dominates(big: DepSet, small: DepSet) -> bool:
    """Every pair of ``small`` is in ``big``, or ``big`` has its ``✓`` version."""
    return all(d in big or Dep(d.holder, d.wanted, CHECK) in big for d in small)


def maximal(states: Iterable[DepSet]) -> FrozenSet[DepSet]:
    """Keep only states not dominated by another one.

    A dominated state is circular in a context only if the dominating one
    is, so dropping it cannot hide a circularity.
    """
    candidates = sorted({reduce_state(s) for s in states}, key=len, reverse=True)
    kept: List[DepSet] = []
    for s in candidates:
        if not any(dominates(k, s) for k in kept):
            kept = [k for k in kept if not dominates(s, k)]
            kept.append(s)
    return frozenset(kept)


class _HintedFresh:
    """Fresh names that reuse the hint when it is still unused."""

    def __init__(self, used: Iterable[str]):
        self.used = set(used)
        self.fallback = FreshNames()

    def __call__(self, hint: str = "") -> str:
        name = hint or self.fallback()
        k = 1
        while name in self.used:
            k += 1
            name = f"{hint}~{k}"
        self.used.add(name)
        return name


def instance(
    d: LamDef,
    inv: Invoke,
    states: FrozenSet[DepSet],
    fresh: Callable[[str], str],
) -> List[DepSet]:
    """Summary states of ``d`` renamed to the actual arguments of ``inv``."""
    names: Dict[str, Optional[str]] = {}
    trees: Dict = {}
    for p, a in zip(d.params, inv.args):
        match(p, a, names, trees)
    if inv.ret:
        for p, a in zip(d.ret, inv.ret):
            match(p, a, names, trees)
    mapping = {}
    for n in sorted(d.formals()):
        target = names.get(n)
        mapping[n] = target if target is not None else fresh(n)
    # Anonymous threads of one instance become one fresh thread.  Compositions
    # between distinct anonymous threads were closed before projection, so
    # only same-instance chains are affected, and those are single-thread.
    mapping[BULLET] = fresh(BULLET + "t")
    out = []
    for s in states:
        out.append(frozenset(
            Dep(substitute_name(x.holder, mapping), substitute_name(x.wanted, mapping),
                mapping.get(x.thread, x.thread))
            for x in s
        ))
    return out


def _dnf(term: Lam, max_states: int):
    try:
        return dnf(term, max_states)
    except StateLimitError as e:
        raise SolverError(f"state limit exceeded: {e}") from None


def _alias_classes(d: LamDef, inv: Invoke) -> List[List[str]]:
    """Formals of ``d`` that ``inv`` binds to one and the same actual name."""
    names: Dict[str, Optional[str]] = {}
    for p, a in zip(d.params, inv.args):
        match(p, a, names, {})
    for p, a in zip(d.ret, inv.ret):
        match(p, a, names, {})
    groups: Dict[str, List[str]] = defaultdict(list)
    for n in sorted(d.formals()):
        if names.get(n) is not None:
            groups[names[n]].append(n)
    return sorted(g for g in groups.values() if len(g) > 1)


def _map_invokes(term: Lam, f: Callable[[Invoke], Invoke]) -> Lam:
    if isinstance(term, Invoke):
        return f(term)
    if isinstance(term, And):
        return conj(*(_map_invokes(x, f) for x in term.items))
    if isinstance(term, Or):
        return disj(*(_map_invokes(x, f) for x in term.items))
    if isinstance(term, Nu):
        return nu(term.names, _map_invokes(term.body, f))
    return term


def base_function(fn: str) -> str:
    return fn.split("[", 1)[0]


def specialize(program: LamProgram) -> LamProgram:
    """Copies of the definitions for each aliasing of their formals in use.

    A summary is computed for pairwise distinct formals.  When a call passes
    one name for several formals, dependencies between them turn into
    reentrant self pairs, which the generic summary cannot tell apart from
    real cycles.  The copy ``f[x=y]`` has ``y`` replaced by ``x``.
    """
    defs: Dict[str, LamDef] = {}
    todo: List[Tuple[str, LamDef]] = []

    def visit(inv: Invoke) -> Invoke:
        d = program.defs.get(inv.fn)
        if d is None:
            return inv
        classes = _alias_classes(d, inv)
        name = d.name + "".join("[" + "=".join(g) + "]" for g in classes)
        if name not in defs:
            mapping = {n: g[0] for g in classes for n in g[1:]}
            f = lambda n: substitute_name(n, mapping)  # noqa: E731
            copy = LamDef(
                name,
                tuple(rename_stype(r, f) for r in d.params),
                tuple(rename_stype(r, f) for r in d.ret),
                rename(d.body, mapping),
            )
            defs[name] = copy
            todo.append((name, copy))
        return Invoke(name, inv.args, inv.ret)

    main = _map_invokes(program.main, visit)
    while todo:
        name, d = todo.pop()
        defs[name] = LamDef(d.name, d.params, d.ret, _map_invokes(d.body, visit))
    return LamProgram(defs, main)


@dataclass
class Saturation:
    summary: Summary
    iterations: int
    history: List[Summary] = field(default_factory=list)


def _expand_state(
    program: LamProgram,
    cs: ConjState,
    summary: Summary,
    fresh: Callable[[str], str],
    max_states: int,
) -> Iterable[Tuple[DepSet, Dict[Dep, Set[str]]]]:
    options = []
    for inv in cs.pending:
        d = program.defs.get(inv.fn)
        if d is None:
            raise SolverError(f"unresolved function {inv.fn}")
        options.append([(s, inv.fn) for s in instance(d, inv, summary[inv.fn], fresh)])
    count = 1
    for o in options:
        count *= max(len(o), 1)
    if count > max_states:
        raise SolverError(f"state limit exceeded: {count} > {max_states}")
    own = [d for d in cs.deps if not reentrant(d)]
    for combo in itertools.product(*options):
        deps = set(own)
        origin: Dict[Dep, Set[str]] = defaultdict(set)
        for dep in own:
            origin[dep].add("main")
        for s, fn in combo:
            deps |= s
            for dep in s:
                origin[dep].add(fn)
        yield frozenset(deps), origin


def _step(program: LamProgram, summary: Summary, fresh, max_states: int) -> Summary:
    nxt: Summary = {}
    for name in sorted(program.defs):
        d = program.defs[name]
        formals = d.formals()
        body = freshen(d.body, fresh)
        result: Set[DepSet] = set()
        for cs in _dnf(body, max_states):
            for deps, _ in _expand_state(program, cs, summary, fresh, max_states):
                closed, _ = _close(deps)
                result.add(_project(closed, formals, name))
                if len(result) > max_states:
                    raise SolverError(f"state limit exceeded in {name}")
        states = maximal(result)
        allowed = formals | {CHECK, BULLET}
        for s in states:
            for dep in s:
                assert _allowed(dep.holder, formals) and _allowed(dep.wanted, formals)
                assert dep.thread in allowed, f"label {dep.thread} escaped projection in {name}"
        nxt[name] = states
    return nxt


def saturate(
    program: LamProgram,
    max_states: int = DEFAULT_MAX_STATES,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    keep_history: bool = False,
) -> Saturation:
    """Iterate summaries from empty bodies to the fixpoint."""
    fresh = FreshNames()
    current: Summary = {name: frozenset({frozenset()}) for name in program.defs}
    history = [current] if keep_history else []
    for i in range(1, max_iterations + 1):
        nxt = _step(program, current, fresh, max_states)
        if keep_history:
            history.append(nxt)
        if nxt == current:
            return Saturation(current, i - 1, history)
        current = nxt
    raise SolverError(f"no fixpoint after {max_iterations} iterations")


def step_summary(program: LamProgram, summary: Summary, max_states: int = DEFAULT_MAX_STATES) -> Summary:
    """One saturation step; exposed for fixpoint-stability checks."""
    return _step(program, summary, FreshNames(), max_states)


@dataclass(frozen=True)
class Circularity:
    cycle: Tuple[Dep, ...]
    functions: Tuple[str, ...]

    def to_json(self) -> dict:
        out = {"cycle": [str(d) for d in self.cycle], "functions": list(self.functions)}
        if self.local_to:
            out["local_to"] = self.local_to
        return out

    @property
    def local_to(self) -> Optional[str]:
        """The function whose local names form the cycle, for summarised cycles."""
        for d in self.cycle:
            if d.holder.startswith(CYCLE_PREFIX):
                return d.holder[len(CYCLE_PREFIX):]
        return None


@dataclass
class Verdict:
    circularities: List[Circularity]
    iterations: int = 0
    states: int = 0

    @property
    def deadlock_free(self) -> bool:
        return not self.circularities

    def to_json(self) -> dict:
        return {
            "verdict": "deadlock-free" if self.deadlock_free else "deadlock",
            "circularities": [c.to_json() for c in self.circularities],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False)

    def report(self) -> str:
        if self.deadlock_free:
            return "deadlock-free (no circularity)\n"
        lines = [f"{len(self.circularities)} circularit{'y' if len(self.circularities) == 1 else 'ies'} found:"]
        for k, c in enumerate(self.circularities, 1):
            if c.local_to:
                lines.append(f"  [{k}] circularity among names local to {c.local_to}")
            else:
                lines.append(f"  [{k}] " + " & ".join(str(d) for d in c.cycle))
            lines.append(f"      via {', '.join(c.functions)}")
        return "\n".join(lines) + "\n"


def analyze(
    program: LamProgram,
    max_states: int = DEFAULT_MAX_STATES,
    saturation: Optional[Saturation] = None,
) -> Verdict:
    """Decide circularity of the main lam against the saturated summaries."""
    program = specialize(program)
    sat = saturation or saturate(program, max_states)
    # instance names only need to differ from each other and from main's names
    fresh = _HintedFresh(term_names(program.main))
    main, own_origin = _unfold_once(program, freshen(program.main, fresh), fresh)
    seen: Dict[FrozenSet[str], Circularity] = {}
    n_states = 0
    for cs in sorted(_dnf(main, max_states), key=lambda s: sorted(map(str, s.deps)) + [str(p) for p in s.pending]):
        for deps, origin in _expand_state(program, cs, sat.summary, fresh, max_states):
            n_states += 1
            for key, cycle in circular_components(deps):
                if key in seen:
                    continue
                fns = sorted({base_function(fn) for dep in cycle for fn in _origin(dep, origin, own_origin)})
                shown = tuple(_shown(dep) for dep in cycle)
                seen[key] = Circularity(shown, tuple(fns))
    ordered = sorted(seen.values(), key=lambda c: (len(c.cycle), [str(d) for d in c.cycle]))
    return Verdict(ordered, sat.iterations, n_states)


def _origin(dep: Dep, origin: Dict[Dep, Set[str]], own: Dict[Dep, Set[str]]) -> Set[str]:
    out = set(origin.get(dep, ()))
    if "main" in out:
        out.discard("main")
        out |= own.get(dep) or {"main"}
    return out


def _unfold_once(program: LamProgram, main: Lam, fresh) -> Tuple[Lam, Dict[Dep, Set[str]]]:
    """Replace main's invocations by their bodies, so witnesses show chains
    of the entry method rather than a summarised self pair."""
    origin: Dict[Dep, Set[str]] = defaultdict(set)

    def body(inv: Invoke) -> Lam:
        d = program.defs[inv.fn]
        _, b = instantiate(d, inv.args, fresh, inv.ret)
        for a in atoms(b):
            if isinstance(a, Dep):
                origin[a].add(base_function(inv.fn))
        return b

    return _map_invokes(main, body), origin


def _shown(dep: Dep) -> Dep:
    # instance threads of anonymous threads are displayed anonymously again
    return Dep(dep.holder, dep.wanted, BULLET if dep.thread.startswith(BULLET) else dep.thread)
