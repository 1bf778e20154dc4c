"""Random lam programs and a brute-force reference decision procedure.

The reference never projects: it unfolds invocations up to a fixed depth with
globally fresh names and looks for a circular strongly connected component in
the dependency graph of every resulting conjunctive state.  A state is
circular when some component (ignoring self loops) contains edges produced by
at least two different threads.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import networkx as nx

Edge = Tuple[str, str, str]  # holder, wanted, thread
Call = Tuple[str, Tuple[str, ...]]


@dataclass
class Summand:
    deps: List[Edge] = field(default_factory=list)
    calls: List[Call] = field(default_factory=list)


@dataclass
class Fn:
    name: str
    params: Tuple[str, ...]
    local: Tuple[str, ...]
    summands: List[Summand]


@dataclass
class RandomProgram:
    fns: Dict[str, Fn]
    main: Fn

    @property
    def recursive(self) -> bool:
        g = nx.DiGraph()
        for f in self.fns.values():
            g.add_node(f.name)
            for s in f.summands:
                for callee, _ in s.calls:
                    g.add_edge(f.name, callee)
        return any(len(c) > 1 or g.has_edge(n, n) for c in nx.strongly_connected_components(g) for n in c)

    def text(self) -> str:
        lines = [_fn_text(f) for f in self.fns.values()]
        lines.append(_fn_text(self.main))
        return "\n".join(lines) + "\n"


def _summand_text(s: Summand) -> str:
    parts = [f"({a},{b})_{t}" for a, b, t in s.deps]
    parts += [f"{fn}({', '.join(args)})" for fn, args in s.calls]
    return " & ".join(parts) if parts else "0"


def _fn_text(f: Fn) -> str:
    body = " + ".join(f"( {_summand_text(s)} )" for s in f.summands)
    if f.local:
        body = f"nu {','.join(f.local)}.( {body} )"
    head = "main" if f.name == "main" else f"{f.name}({', '.join(f.params)})"
    return f"{head} = {body}"


def random_program(rng: random.Random, max_fns: int = 4, max_names: int = 6) -> RandomProgram:
    n = rng.randint(1, max_fns)
    names = [f"f{k}" for k in range(n)]
    arity = {fn: rng.randint(1, 3) for fn in names}

    def summands(scope: Sequence[str], callees: Sequence[str]) -> List[Summand]:
        out = []
        for _ in range(rng.choice((1, 1, 2))):
            s = Summand()
            for _ in range(rng.randint(0, 3)):
                a, b, t = rng.choice(scope), rng.choice(scope), rng.choice(scope)
                s.deps.append((a, b, t))
            for _ in range(rng.choice((0, 1, 1, 2))):
                callee = rng.choice(callees)
                s.calls.append((callee, tuple(rng.choice(scope) for _ in range(arity[callee]))))
            out.append(s)
        return out

    fns = {}
    for fn in names:
        params = tuple(f"x{k}" for k in range(arity[fn]))
        local = tuple(f"y{k}" for k in range(rng.randint(0, max_names - len(params))))
        fns[fn] = Fn(fn, params, local, summands(params + local, names))
    main_local = tuple(f"m{k}" for k in range(rng.randint(2, max_names)))
    main = Fn("main", (), main_local, summands(main_local, names))
    return RandomProgram(fns, main)


class Unfolder:
    """Depth-bounded unfolding into conjunctive states of plain edges."""

    def __init__(self, program: RandomProgram, depth: int = 6, max_states: int = 5000):
        self.program = program
        self.depth = depth
        self.max_states = max_states
        self.counter = itertools.count()

    def states(self) -> Optional[List[FrozenSet[Edge]]]:
        """All unfolded states, or ``None`` when there are too many."""
        try:
            return self._fn(self.program.main, {}, 0)
        except OverflowError:
            return None

    def _fn(self, f: Fn, binding: Dict[str, str], depth: int) -> List[FrozenSet[Edge]]:
        env = dict(binding)
        for y in f.local:
            env[y] = f"{y}@{next(self.counter)}"
        out: List[FrozenSet[Edge]] = []
        for s in f.summands:
            acc = [frozenset((env[a], env[b], env[t]) for a, b, t in s.deps)]
            for callee, args in s.calls:
                if depth >= self.depth:
                    continue  # truncated: the call contributes nothing
                g = self.program.fns[callee]
                sub = self._fn(g, {p: env[a] for p, a in zip(g.params, args)}, depth + 1)
                if len(acc) * len(sub) > self.max_states:
                    raise OverflowError
                acc = [x | y for x in acc for y in sub]
            out.extend(acc)
            if len(out) > self.max_states:
                raise OverflowError
        return out


def circular(state: FrozenSet[Edge]) -> bool:
    g = nx.MultiDiGraph()
    for a, b, t in state:
        if a != b:
            g.add_edge(a, b, thread=t)
    for comp in nx.strongly_connected_components(g):
        if len(comp) < 2:
            continue
        threads = {t for a, b, t in g.subgraph(comp).edges(data="thread")}
        if len(threads) >= 2:
            return True
    return False


def reference_verdict(program: RandomProgram, depth: int = 6) -> Optional[bool]:
    """True when some unfolded state is circular; None when unfolding overflows."""
    states = Unfolder(program, depth).states()
    if states is None:
        return None
    return any(circular(s) for s in states)
