"""Command line interface.

Exit codes: 0 deadlock-free, 1 circularities found (or, for ``compare``, a
soundness violation), 2 error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .frontend import AssemblyError, ClassTable, flow_facts, parse_program
from .lam import LamError, LamProgram, parse_lam, print_lam
from .oracle import Bounds, ExploreResult, OracleError, explore
from .solver import DEFAULT_MAX_STATES, SolverError, Verdict, analyze
from .typesystem import TypingError, default_entry, infer_bct

EXIT_FREE, EXIT_DEADLOCK, EXIT_ERROR = 0, 1, 2


class PhaseError(Exception):
    def __init__(self, phase: str, error: Exception):
        self.phase = phase
        self.error = error
        super().__init__(f"{phase}: {error}")

    def to_json(self) -> dict:
        out = {"verdict": "error", "phase": self.phase, "message": str(self.error)}
        if isinstance(self.error, TypingError):
            out["diagnostic"] = self.error.record()
        if isinstance(self.error, AssemblyError):
            out["diagnostic"] = {"line": self.error.line, "col": self.error.col}
        return out


@dataclass
class AnalysisReport:
    verdict: Verdict
    program: LamProgram
    entry: Optional[str]
    timings: Dict[str, float] = field(default_factory=dict)
    diagnostics: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = self.verdict.to_json()
        out["entry"] = self.entry
        out["timings"] = {k: round(v, 4) for k, v in self.timings.items()}
        out["diagnostics"] = list(self.diagnostics)
        return out


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise PhaseError("input", e) from None


def load_table(path: str) -> ClassTable:
    text = _read(path)
    try:
        return parse_program(text)
    except AssemblyError as e:
        raise PhaseError("frontend", e) from None


def run_analysis(table: ClassTable, entry: Optional[str] = None, max_states: int = DEFAULT_MAX_STATES) -> AnalysisReport:
    timings = {}
    t0 = time.perf_counter()
    try:
        facts = flow_facts(table)
        entry = entry or default_entry(table)
        table.method(entry)
    except (KeyError, TypingError) as e:
        raise PhaseError("frontend", e) from None
    try:
        inference = infer_bct(table, facts, entry)
    except (TypingError, LamError) as e:
        raise PhaseError("typesystem", e) from None
    t1 = time.perf_counter()
    timings["typesystem"] = t1 - t0
    try:
        verdict = analyze(inference.program, max_states)
    except SolverError as e:
        raise PhaseError("solver", e) from None
    timings["solver"] = time.perf_counter() - t1
    diagnostics = [f"{k}: fixpoint after {n} iteration(s)" for k, n in sorted(inference.iterations.items())]
    return AnalysisReport(verdict, inference.program, entry, timings, diagnostics)


def _emit(args, payload: dict, human: str) -> None:
    if args.format == "json":
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        sys.stdout.write(human)


def cmd_analyze(args) -> int:
    table = load_table(args.file)
    report = run_analysis(table, args.entry, args.max_states)
    if args.emit_lam:
        Path(args.emit_lam).write_text(print_lam(report.program), encoding="utf-8")
    timing = ", ".join(f"{k} {v:.2f}s" for k, v in report.timings.items())
    _emit(args, report.to_json(), f"{args.file}: {report.verdict.report()}({timing})\n")
    return EXIT_FREE if report.verdict.deadlock_free else EXIT_DEADLOCK


def cmd_solve(args) -> int:
    try:
        program = parse_lam(_read(args.file))
        program.validate()
    except LamError as e:
        raise PhaseError("lam", e) from None
    try:
        verdict = analyze(program, args.max_states)
    except SolverError as e:
        raise PhaseError("solver", e) from None
    _emit(args, verdict.to_json(), f"{args.file}: {verdict.report()}")
    return EXIT_FREE if verdict.deadlock_free else EXIT_DEADLOCK


def _bounds(args) -> Bounds:
    return Bounds(max_steps=args.max_steps, max_threads=args.max_threads)


def run_oracle(table: ClassTable, entry: Optional[str], ints: Sequence[int], bounds: Bounds) -> ExploreResult:
    try:
        entry = entry or default_entry(table)
        return explore(table, entry, ints, bounds)
    except (OracleError, KeyError, TypingError) as e:
        raise PhaseError("oracle", e) from None


def _trace_text(trace) -> str:
    return "\n".join(f"    {tid:>6}  {m}@{pc}: {ins}" for tid, m, pc, ins in trace)


def cmd_oracle(args) -> int:
    table = load_table(args.file)
    result = run_oracle(table, args.entry, args.args, _bounds(args))
    lines = [f"{args.file}: {'DEADLOCK' if result.deadlocked else 'no deadlock'} "
             f"({result.configurations} configurations, {result.steps} steps, "
             f"{'exhaustive' if result.exhausted else 'bounds hit'})"]
    for k, trace in enumerate(result.deadlocks[:1], 1):
        lines.append(f"  trace {k}:")
        lines.append(_trace_text(trace[-12:]))
    _emit(args, result.to_json(), "\n".join(lines) + "\n")
    return EXIT_DEADLOCK if result.deadlocked else EXIT_FREE


@dataclass
class CompareRow:
    name: str
    static: str
    oracle: str
    exhausted: bool
    status: str
    seconds: float

    def to_json(self) -> dict:
        return self.__dict__.copy()


def compare_one(name: str, table: ClassTable, entry: Optional[str], ints: Sequence[int],
                bounds: Bounds, max_states: int = DEFAULT_MAX_STATES) -> CompareRow:
    t0 = time.perf_counter()
    report = run_analysis(table, entry, max_states)
    result = run_oracle(table, report.entry, ints, bounds)
    static = "deadlock-free" if report.verdict.deadlock_free else f"{len(report.verdict.circularities)} circularities"
    oracle = "deadlock" if result.deadlocked else "no deadlock"
    if result.deadlocked and report.verdict.deadlock_free:
        status = "FAILURE"
    elif result.deadlocked or report.verdict.deadlock_free:
        status = "agree"
    else:
        status = "over-report" if result.exhausted else "unconfirmed"
    return CompareRow(name, static, oracle, result.exhausted, status, time.perf_counter() - t0)


def corpus_entries() -> List[dict]:
    """The bundled corpus manifest, with absolute file paths."""
    root = resources.files("deadlam") / "corpus"
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    out = []
    for e in manifest["programs"]:
        e = dict(e)
        e["path"] = str(root / e["file"])
        out.append(e)
    return out


def cmd_compare(args) -> int:
    bounds = _bounds(args)
    jobs = []
    if args.corpus or not args.files:
        for e in corpus_entries():
            if e.get("expect") == "error":
                continue
            jobs.append((e["name"], e["path"], e.get("entry"), e.get("args", [])))
    for f in args.files:
        jobs.append((Path(f).stem, f, args.entry, args.args))
    rows = []
    for name, path, entry, ints in jobs:
        rows.append(compare_one(name, load_table(path), entry, ints, bounds, args.max_states))
    failures = [r for r in rows if r.status == "FAILURE"]
    width = max([len(r.name) for r in rows] + [7])
    lines = [f"{'program':<{width}}  {'static':<18} {'oracle':<12} {'status':<12} time"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.static:<18} {r.oracle:<12} {r.status:<12} {r.seconds:.2f}s"
                     + ("" if r.exhausted else "  (oracle bounds hit)"))
    lines.append(f"{len(rows)} programs, {len(failures)} soundness violation(s)")
    payload = {"rows": [r.to_json() for r in rows], "violations": len(failures)}
    _emit(args, payload, "\n".join(lines) + "\n")
    return EXIT_DEADLOCK if failures else EXIT_FREE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deadlam", description="Static deadlock analysis of JVML_d programs.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, oracle=False, solver=True):
        sp.add_argument("--format", choices=("human", "json"), default="human")
        if solver:
            sp.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES, help="solver state cap")
        if oracle:
            sp.add_argument("--max-steps", type=int, default=100_000)
            sp.add_argument("--max-threads", type=int, default=6)
            sp.add_argument("--args", type=int, nargs="*", default=[], help="int arguments of the entry method")

    a = sub.add_parser("analyze", help="infer lams and decide deadlock freedom")
    a.add_argument("file")
    a.add_argument("--entry", help="entry method C.m (default: the only main)")
    a.add_argument("--emit-lam", metavar="PATH", help="write the inferred lam program")
    common(a)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("solve", help="decide circularity of a .lam program")
    s.add_argument("file")
    common(s)
    s.set_defaults(func=cmd_solve)

    o = sub.add_parser("oracle", help="explore all schedules of a program")
    o.add_argument("file")
    o.add_argument("--entry")
    common(o, oracle=True, solver=False)
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("compare", help="static verdict against the oracle")
    c.add_argument("files", nargs="*")
    c.add_argument("--entry")
    c.add_argument("--corpus", action="store_true", help="run the bundled corpus")
    common(c, oracle=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PhaseError as e:
        if getattr(args, "format", "human") == "json":
            print(json.dumps(e.to_json(), indent=2, ensure_ascii=False))
        else:
            print(f"error [{e.phase}]: {e.error}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
