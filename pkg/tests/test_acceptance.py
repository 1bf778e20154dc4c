"""Acceptance criteria, one pass/fail line each.

Each test records its line; the lines are repeated in pytest's terminal
summary.  Run with ``pytest tests/test_acceptance.py`` or as a script.
"""

from __future__ import annotations

import random
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bruteforce import random_program, reference_verdict  # noqa: E402
from conftest import corpus_text, manifest  # noqa: E402
from deadlam import analyze, flow_facts, infer_bct, parse_lam, parse_program  # noqa: E402
from deadlam.cli import compare_one, corpus_entries, load_table, run_analysis  # noqa: E402
from deadlam.lam import Invoke, Leaf, Node, ac_equal, atoms, dnf, freshen, FreshNames, match, rename  # noqa: E402
from deadlam.oracle import Bounds, explore  # noqa: E402
from deadlam.typesystem import default_entry  # noqa: E402

GOLDEN = Path(__file__).parent / "golden" / "network_inferred.lam"
LINES = []


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


def inferred(name: str):
    table = parse_program(corpus_text(name))
    return infer_bct(table, flow_facts(table), default_entry(table))


# ---------------------------------------------------------------- 1


def test_c1_network_discrimination():
    timings, verdicts = {}, {}
    for name in ("network_xy.jd", "network_xx.jd"):
        t0 = time.perf_counter()
        table = parse_program(corpus_text(name))
        verdicts[name] = run_analysis(table).verdict
        timings[name] = time.perf_counter() - t0
    ok = (verdicts["network_xy.jd"].deadlock_free
          and len(verdicts["network_xx.jd"].circularities) >= 1
          and all(t < 5.0 for t in timings.values()))
    report("C1 network discrimination", ok,
           f"x,y -> {'deadlock-free' if verdicts['network_xy.jd'].deadlock_free else 'deadlock'}, "
           f"x,x -> {len(verdicts['network_xx.jd'].circularities)} circularities; "
           f"max time {max(timings.values()):.3f}s (< 5s)")


# ---------------------------------------------------------------- 2


def _strip_classes(rho):
    if isinstance(rho, Node):
        return Node(rho.root, tuple((f, _strip_classes(v)) for f, v in rho.fields), None)
    return Leaf("top") if isinstance(rho, Leaf) else rho


def _no_classes(term):
    from deadlam.lam import And, Nu, Or, conj, disj, nu
    if isinstance(term, Invoke):
        return Invoke(term.fn, tuple(map(_strip_classes, term.args)), tuple(map(_strip_classes, term.ret)))
    if isinstance(term, And):
        return conj(*map(_no_classes, term.items))
    if isinstance(term, Or):
        return disj(*map(_no_classes, term.items))
    if isinstance(term, Nu):
        return nu(term.names, _no_classes(term.body))
    return term


def positional_equal(ours, theirs) -> bool:
    """AC-equality of two definitions after renaming our formals to theirs by position."""
    if len(ours.params) != len(theirs.params):
        return False
    names, trees = {}, {}
    for p, a in zip(ours.params, theirs.params):
        match(_strip_classes(p), _strip_classes(a), names, trees)
    mapping = {k: v for k, v in names.items() if v is not None}
    return ac_equal(_no_classes(rename(ours.body, mapping)), _no_classes(theirs.body))


def _has_run_and_recursion(d) -> bool:
    for s in dnf(freshen(d.body, FreshNames())):
        fns = [p.fn for p in s.pending]
        if d.name in fns and any(f.endswith(".run") or f.startswith("RUN$") for f in fns):
            return True
    return False


def test_c2_golden_lam():
    ours = inferred("network_xy.jd").program
    golden = parse_lam(corpus_text("network_reference.lam"))
    golden.validate()
    take = ours.defs["Network.takeForks"]
    two_deps = len([a for a in atoms(take.body)]) == 2 and not any(isinstance(a, Invoke) for a in atoms(take.body))
    equal = {fn for fn in golden.defs if fn in ours.defs and positional_equal(ours.defs[fn], golden.defs[fn])}
    pair_ours = _has_run_and_recursion(ours.defs["Network.buildNetwork"])
    pair_golden = _has_run_and_recursion(golden.defs["Network.buildNetwork"])
    frozen = parse_lam(GOLDEN.read_text(encoding="utf-8"))
    regression = set(frozen.defs) == set(ours.defs) and all(
        ac_equal(frozen.defs[k].body, ours.defs[k].body) for k in ours.defs) and ac_equal(frozen.main, ours.main)
    differing = sorted(set(golden.defs) - equal)
    # buildNetwork and main differ from the reference by design (RUN for a
    # thread created in a recursive method, exported names); see the ledger.
    ok = (two_deps and "Network.takeForks" in equal and pair_ours and pair_golden and regression
          and set(differing) <= {"Network.buildNetwork", "Network.main"})
    report("C2 golden lam", ok,
           f"takeForks two deps={two_deps}; AC-equal up to renaming: {', '.join(sorted(equal))}; "
           f"differing by design: {', '.join(differing) or 'none'}; run & recursive-call pair "
           f"(ours/reference)={pair_ours}/{pair_golden}; frozen inferred golden matches={regression}")


# ---------------------------------------------------------------- 3


def test_c3_benchmark_families():
    entries = {e["name"]: e for e in manifest()}
    counts = {}
    for name, e in entries.items():
        if e.get("family") and e["expect"] != "error":
            counts[name] = len(run_analysis(parse_program(corpus_text(e["file"])), e.get("entry")).verdict.circularities)
    lines, ok = [], True
    for family in ("buildnetwork", "philosophers", "threadarrays"):
        per_n = {entries[n]["n"]: c for n, c in counts.items() if entries[n]["family"] == family and entries[n].get("n")}
        good = sorted(per_n) == [2, 4, 8] and min(per_n.values()) >= 1 and len(set(per_n.values())) == 1
        ok &= good
        lines.append(f"{family} {per_n}")
    for name in ("philosophers_ordered", "chain_network"):
        ok &= counts.get(name, -1) == 0 if name in counts else len(
            run_analysis(parse_program(corpus_text(entries[name]["file"]))).verdict.circularities) == 0
        lines.append(f"{name} 0")
    report("C3 benchmark families", ok, "; ".join(lines))


# ---------------------------------------------------------------- 4


def test_c4_reentrancy():
    names = sorted(e["file"] for e in manifest() if e["name"].startswith("reentrant_"))
    results = []
    for name in names:
        table = parse_program(corpus_text(name))
        static = run_analysis(table).verdict
        dyn = explore(table, default_entry(table), [], Bounds())
        results.append((name, len(static.circularities), dyn.deadlocked, dyn.exhausted))
    ok = len(names) >= 5 and all(c == 0 and not d and x for _, c, d, x in results)
    report("C4 reentrancy", ok, f"{len(names)} programs, circularities "
           f"{[c for _, c, _, _ in results]}, oracle deadlocks {sum(d for _, _, d, _ in results)}, "
           f"all exhaustive={all(x for *_, x in results)}")


# ---------------------------------------------------------------- 5


def test_c5_solver_vs_unfolder(n_programs: int = 300, seed: int = 2024):
    rng = random.Random(seed)
    done = skipped = under = over = over_nonrec = 0
    while done < n_programs:
        p = random_program(rng)
        ref = reference_verdict(p, depth=6)
        if ref is None:
            skipped += 1
            continue
        done += 1
        got = not analyze(parse_lam(p.text())).deadlock_free
        if ref and not got:
            under += 1
        elif got and not ref:
            over += 1
            over_nonrec += not p.recursive
    ok = done >= 200 and under == 0 and over_nonrec == 0 and over <= 0.05 * done
    report("C5 solver vs depth-6 unfolder", ok,
           f"{done} programs ({skipped} regenerated: unfolding too large), missed {under}, "
           f"over-reports {over} ({over_nonrec} non-recursive), tolerance <= 5%")


# ---------------------------------------------------------------- 6


def test_c6_properties():
    import test_properties as props

    checks = [
        props.test_closure_is_extensive,
        props.test_closure_is_idempotent,
        props.test_closure_is_monotone,
        props.test_saturation_is_stable,
        props.test_verdict_invariant_under_renaming,
    ]
    failures = []
    for check in checks:
        try:
            check()
        except Exception as e:  # noqa: BLE001
            failures.append(f"{check.__name__}: {type(e).__name__}")
    report("C6 closure/fixpoint properties", not failures,
           f"{len(checks)} properties x {props.CASES} cases, failures: {failures or 'none'}")


# ---------------------------------------------------------------- 7


def test_c7_end_to_end():
    t0 = time.perf_counter()
    bounds = Bounds(max_steps=100_000, max_threads=6)
    rows = []
    for e in corpus_entries():
        if e["expect"] == "error":
            continue
        rows.append(compare_one(e["name"], load_table(e["path"]), e.get("entry"), e.get("args", []), bounds))
    elapsed = time.perf_counter() - t0
    failures = [r.name for r in rows if r.status == "FAILURE"]
    confirmed = sum(r.oracle == "deadlock" for r in rows)
    bounded = [r.name for r in rows if not r.exhausted]
    ok = len(rows) >= 15 and not failures and elapsed < 120
    report("C7 end-to-end soundness", ok,
           f"{len(rows)} programs, {len(failures)} missed deadlocks, {confirmed} oracle deadlocks, "
           f"bounds hit on {len(bounded)} ({', '.join(bounded) or 'none'}), {elapsed:.1f}s (< 120s)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
