"""Concrete interpreter of JVML_d and a bounded exhaustive scheduler.

Configurations are immutable; :func:`step` executes one instruction of one
thread.  :func:`explore` searches every schedule up to the bounds.  Only lock
acquisitions are scheduling points: everything a thread does between two
``monitorenter`` instructions touches nothing another thread can observe in
a way that affects blocking (fields are written only by constructors), so
those steps are run greedily.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .frontend import ClassTable, FieldRef, Instr, MethodRef

MAIN = "main"
VOID = "void"


class OracleError(RuntimeError):
    """A run-time type error; typed programs never raise it."""


@dataclass(frozen=True)
class Ref:
    addr: int

    def __str__(self) -> str:
        return f"@{self.addr}"


Value = object  # int, Ref, VOID or None (an unset field)


@dataclass(frozen=True)
class Obj:
    cls: str
    fields: Tuple[Tuple[str, Value], ...]
    owner: Optional[str] = None
    count: int = 0
    started: bool = False

    def get(self, f: str) -> Value:
        for k, v in self.fields:
            if k == f:
                return v
        raise OracleError(f"no field {f} in {self.cls}")


@dataclass(frozen=True)
class Frame:
    method: str
    pc: int
    local: Tuple[Tuple[str, Value], ...]
    stack: Tuple[Value, ...] = ()
    # whether the caller expects a pushed void (invokevirtual) or not
    push_void: bool = True

    def var(self, x: str) -> Value:
        for k, v in self.local:
            if k == x:
                return v
        raise OracleError(f"variable {x} is unset in {self.method}@{self.pc}")

    def store(self, x: str, v: Value) -> "Frame":
        rest = tuple((k, w) for k, w in self.local if k != x)
        return replace(self, local=tuple(sorted(rest + ((x, v),), key=lambda p: p[0])))


@dataclass(frozen=True)
class Thread:
    frames: Tuple[Frame, ...]
    blocked_on: Optional[int] = None

    @property
    def done(self) -> bool:
        return not self.frames


@dataclass(frozen=True)
class RunConfig:
    heap: Tuple[Tuple[int, Obj], ...]
    threads: Tuple[Tuple[str, Thread], ...]
    next_addr: int = 0

    def obj(self, a: int) -> Obj:
        for k, o in self.heap:
            if k == a:
                return o
        raise OracleError(f"dangling reference @{a}")

    def thread(self, tid: str) -> Thread:
        for k, t in self.threads:
            if k == tid:
                return t
        raise KeyError(tid)

    def with_obj(self, a: int, o: Obj) -> "RunConfig":
        heap = tuple((k, v) for k, v in self.heap if k != a) + ((a, o),)
        return replace(self, heap=tuple(sorted(heap, key=lambda p: p[0])))

    def with_thread(self, tid: str, t: Thread) -> "RunConfig":
        threads = tuple((k, v) for k, v in self.threads if k != tid) + ((tid, t),)
        return replace(self, threads=tuple(sorted(threads, key=lambda p: p[0])))

    def live(self) -> List[str]:
        return [k for k, t in self.threads if not t.done]

    def held(self, tid: str) -> List[int]:
        return [a for a, o in self.heap if o.owner == tid]


def _alloc(cfg: RunConfig, table: ClassTable, cls: str) -> Tuple[RunConfig, Ref]:
    a = cfg.next_addr
    obj = Obj(cls, tuple((f, None) for f, _ in table.classes[cls].fields))
    cfg = replace(cfg, next_addr=a + 1).with_obj(a, obj)
    return cfg, Ref(a)


def initial_config(table: ClassTable, entry: str, args: Sequence[int] = ()) -> RunConfig:
    """Main thread about to run ``entry`` on fresh objects and the given ints."""
    m = table.method(entry)
    cfg = RunConfig((), ())
    cfg, this = _alloc(cfg, table, m.cls)
    local = [("this", this)]
    ints = list(args)
    for t, n in zip(m.params, m.param_names):
        if t == "int":
            if not ints:
                raise OracleError(f"missing int argument {n} for {entry}")
            local.append((n, ints.pop(0)))
        elif t == "top":
            local.append((n, None))
        else:
            cfg, r = _alloc(cfg, table, t)
            local.append((n, r))
    if ints:
        raise OracleError(f"too many int arguments for {entry}")
    frame = Frame(entry, 0, tuple(sorted(local, key=lambda p: p[0])))
    return cfg.with_thread(MAIN, Thread((frame,)))


def next_instr(table: ClassTable, cfg: RunConfig, tid: str) -> Optional[Instr]:
    t = cfg.thread(tid)
    if t.done:
        return None
    f = t.frames[-1]
    return table.method(f.method).body[f.pc]


def can_step(table: ClassTable, cfg: RunConfig, tid: str) -> bool:
    t = cfg.thread(tid)
    if t.done:
        return False
    ins = next_instr(table, cfg, tid)
    if ins.op != "monitorenter":
        return True
    top = t.frames[-1].stack
    if not top or not isinstance(top[0], Ref):
        return True  # step will raise
    o = cfg.obj(top[0].addr)
    return o.owner is None or o.owner == tid


def _ref(v: Value, where: str) -> Ref:
    if not isinstance(v, Ref):
        raise OracleError(f"{where}: expected an object, found {v!r}")
    return v


def _int(v: Value, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise OracleError(f"{where}: expected an int, found {v!r}")
    return v


def step(table: ClassTable, cfg: RunConfig, tid: str) -> RunConfig:
    """Execute one instruction of thread ``tid``.

    A ``monitorenter`` on a lock owned by another thread leaves the thread
    blocked on that lock and the configuration otherwise unchanged.
    """
    t = cfg.thread(tid)
    if t.done:
        raise OracleError(f"thread {tid} has terminated")
    f = t.frames[-1]
    m = table.method(f.method)
    ins = m.body[f.pc]
    where = f"{tid}:{f.method}@{f.pc}"
    nxt = m.next_address(f.pc)
    op, st = ins.op, f.stack

    def pop(n: int = 1) -> Tuple[List[Value], Tuple[Value, ...]]:
        if len(st) < n:
            raise OracleError(f"{where}: stack underflow")
        return list(st[:n]), st[n:]

    def advance(frame: Frame, c: RunConfig = cfg) -> RunConfig:
        if nxt is None:
            raise OracleError(f"{where}: falls off the method")
        frame = replace(frame, pc=nxt)
        return c.with_thread(tid, Thread(t.frames[:-1] + (frame,)))

    if op == "push":
        return advance(replace(f, stack=(0,) + st))
    if op == "inc":
        (v,), rest = pop()
        return advance(replace(f, stack=(_int(v, where) + 1,) + rest))
    if op == "sub":
        (v, w), rest = pop(2)
        return advance(replace(f, stack=(_int(w, where) - _int(v, where),) + rest))
    if op == "pop":
        _, rest = pop()
        return advance(replace(f, stack=rest))
    if op == "dup":
        (v,), _ = pop()
        return advance(replace(f, stack=(v,) + st))
    if op == "load":
        return advance(replace(f, stack=(f.var(ins.arg),) + st))
    if op == "store":
        (v,), rest = pop()
        return advance(replace(f, stack=rest).store(ins.arg, v))
    if op == "if":
        (v,), rest = pop()
        if _int(v, where) != 0:
            frame = replace(f, pc=ins.arg, stack=rest)
            return cfg.with_thread(tid, Thread(t.frames[:-1] + (frame,)))
        return advance(replace(f, stack=rest))
    if op == "goto":
        return cfg.with_thread(tid, Thread(t.frames[:-1] + (replace(f, pc=ins.arg),)))
    if op == "new":
        c, r = _alloc(cfg, table, ins.arg)
        return advance(replace(f, stack=(r,) + st), c)
    if op == "getfield":
        ref: FieldRef = ins.arg
        (a,), rest = pop()
        o = cfg.obj(_ref(a, where).addr)
        return advance(replace(f, stack=(o.get(ref.name),) + rest))
    if op == "putfield":
        ref = ins.arg
        (v, a), rest = pop(2)
        addr = _ref(a, where).addr
        o = cfg.obj(addr)
        fields = tuple((k, v if k == ref.name else w) for k, w in o.fields)
        return advance(replace(f, stack=rest), cfg.with_obj(addr, replace(o, fields=fields)))
    if op == "monitorenter":
        (a,), rest = pop()
        addr = _ref(a, where).addr
        o = cfg.obj(addr)
        if o.owner is not None and o.owner != tid:
            return cfg.with_thread(tid, replace(t, blocked_on=addr))
        c = cfg.with_obj(addr, replace(o, owner=tid, count=o.count + 1))
        return advance(replace(f, stack=rest), c.with_thread(tid, replace(t, blocked_on=None)))
    if op == "monitorexit":
        (a,), rest = pop()
        addr = _ref(a, where).addr
        o = cfg.obj(addr)
        if o.owner != tid:
            raise OracleError(f"{where}: monitorexit on a lock not held")
        o = replace(o, count=o.count - 1, owner=tid if o.count > 1 else None)
        return advance(replace(f, stack=rest), cfg.with_obj(addr, o))
    if op == "start":
        (a,), rest = pop()
        addr = _ref(a, where).addr
        o = cfg.obj(addr)
        if o.started:
            raise OracleError(f"{where}: thread @{addr} started twice")
        c = cfg.with_obj(addr, replace(o, started=True))
        c = advance(replace(f, stack=rest), c)
        child = Frame(f"{o.cls}.run", 0, (("this", Ref(addr)),))
        return c.with_thread(f"@{addr}", Thread((child,)))
    if op in ("invokevirtual", "invokespecial"):
        mref: MethodRef = ins.arg
        n = len(mref.params)
        vals, rest = pop(n + 1)
        recv = _ref(vals[n], where)
        callee = table.method(mref.key)
        if cfg.obj(recv.addr).cls != mref.cls:
            raise OracleError(f"{where}: receiver of class {cfg.obj(recv.addr).cls}")
        local = [("this", recv)] + list(zip(callee.param_names, reversed(vals[:n])))
        caller = replace(f, stack=rest)
        frame = Frame(callee.key, 0, tuple(sorted(local, key=lambda p: p[0])), (), op == "invokevirtual")
        return cfg.with_thread(tid, Thread(t.frames[:-1] + (caller, frame)))
    if op == "return":
        result: Optional[Value]
        if m.return_type == "void":
            result = VOID if f.push_void else None
        else:
            if not st:
                raise OracleError(f"{where}: return without a value")
            result = st[0]
        frames = t.frames[:-1]
        if not frames:
            return cfg.with_thread(tid, Thread(()))
        caller = frames[-1]
        cm = table.method(caller.method)
        cnext = cm.next_address(caller.pc)
        if cnext is None:
            raise OracleError(f"{where}: caller falls off the method")
        stack = caller.stack if result is None else (result,) + caller.stack
        return cfg.with_thread(tid, Thread(frames[:-1] + (replace(caller, pc=cnext, stack=stack),)))
    raise OracleError(f"{where}: unsupported instruction {op}")


# ------------------------------------------------------------ exploration

TraceStep = Tuple[str, str, int, str]


@dataclass
class Bounds:
    max_steps: int = 100_000
    max_threads: int = 6
    max_traces: int = 20


@dataclass
class ExploreResult:
    deadlocks: List[List[TraceStep]] = field(default_factory=list)
    exhausted: bool = True
    configurations: int = 0
    steps: int = 0
    deadlock_states: int = 0

    @property
    def deadlocked(self) -> bool:
        return self.deadlock_states > 0

    def to_json(self) -> dict:
        return {
            "deadlock": self.deadlocked,
            "deadlock_states": self.deadlock_states,
            "deadlocks": [[list(s) for s in trace] for trace in self.deadlocks],
            "exhausted": self.exhausted,
            "configurations": self.configurations,
            "steps": self.steps,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def canonical(cfg: RunConfig) -> tuple:
    """The configuration with heap addresses renumbered by reachability.

    Thread ids of spawned threads are their object addresses, so they are
    renamed with the heap.  Unreachable objects are dropped.
    """
    numbering: Dict[int, int] = {}
    live = {tid: t for tid, t in cfg.threads}
    order: List[str] = []

    def see(v: Value) -> None:
        if isinstance(v, Ref) and v.addr not in numbering:
            numbering[v.addr] = len(numbering)
            todo.append(v.addr)

    def visit_thread(tid: str) -> None:
        order.append(tid)
        t = live[tid]
        for f in t.frames:
            for _, v in f.local:
                see(v)
            for v in f.stack:
                see(v)
        if t.blocked_on is not None:
            see(Ref(t.blocked_on))
        for a in cfg.held(tid):
            see(Ref(a))

    todo: List[int] = []
    pending = [MAIN] if MAIN in live else []
    while pending or todo or len(order) < len(live):
        if pending:
            visit_thread(pending.pop(0))
        elif todo:
            a = todo.pop(0)
            for _, v in cfg.obj(a).fields:
                see(v)
            tid = f"@{a}"
            if tid in live and tid not in order:
                pending.append(tid)
        else:
            rest = sorted((k for k in live if k not in order), key=lambda k: _thread_shape(live[k]))
            pending.append(rest[0])
    def ren(v: Value) -> Value:
        return ("ref", numbering[v.addr]) if isinstance(v, Ref) else v

    def tname(tid: str) -> str:
        return tid if tid == MAIN else f"@{numbering.get(int(tid[1:]), tid)}"

    threads = []
    for tid in order:
        t = live[tid]
        frames = tuple(
            (f.method, f.pc, tuple((k, ren(v)) for k, v in f.local), tuple(ren(v) for v in f.stack), f.push_void)
            for f in t.frames
        )
        threads.append((tname(tid), frames, numbering.get(t.blocked_on)))
    heap = []
    for a, o in cfg.heap:
        if a in numbering:
            owner = None if o.owner is None else tname(o.owner)
            heap.append((numbering[a], o.cls, tuple((k, ren(v)) for k, v in o.fields), owner, o.count, o.started))
    return tuple(sorted(threads, key=str)), tuple(sorted(heap, key=str))


def _thread_shape(t: Thread) -> str:
    return str([(f.method, f.pc, len(f.stack)) for f in t.frames])


def _runnable(table: ClassTable, cfg: RunConfig) -> List[str]:
    return [tid for tid in cfg.live() if can_step(table, cfg, tid)]


def explore(
    table: ClassTable,
    entry: str,
    args: Sequence[int] = (),
    bounds: Optional[Bounds] = None,
) -> ExploreResult:
    """Depth-first search over all schedules, looking for deadlocked states."""
    bounds = bounds or Bounds()
    result = ExploreResult()
    seen = set()

    def run_local(cfg: RunConfig, tid: str, trace: List[TraceStep]) -> Optional[RunConfig]:
        # the chosen step, then local steps until the next acquisition
        first = True
        while True:
            t = cfg.thread(tid)
            if t.done:
                return cfg
            ins = next_instr(table, cfg, tid)
            if ins.op == "monitorenter" and not first:
                return cfg
            if not can_step(table, cfg, tid):
                return cfg
            if result.steps >= bounds.max_steps:
                result.exhausted = False
                return None
            f = t.frames[-1]
            trace.append((tid, f.method, f.pc, str(ins)))
            cfg = step(table, cfg, tid)
            result.steps += 1
            first = False
            if len(cfg.live()) > bounds.max_threads:
                result.exhausted = False
                return None

    stack: List[Tuple[RunConfig, List[TraceStep]]] = [(initial_config(table, entry, args), [])]
    while stack:
        cfg, trace = stack.pop()
        key = canonical(cfg)
        if key in seen:
            continue
        seen.add(key)
        result.configurations += 1
        live = cfg.live()
        runnable = _runnable(table, cfg)
        if not runnable:
            if live:
                result.deadlock_states += 1
                if len(result.deadlocks) < bounds.max_traces:
                    result.deadlocks.append(trace)
            continue
        for tid in reversed(runnable):
            tr = list(trace)
            nxt = run_local(cfg, tid, tr)
            if nxt is not None:
                stack.append((nxt, tr))
    return result
