"""Algebraic properties of the closure and of saturation."""

import random

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from bruteforce import random_program
from deadlam import analyze, parse_lam, saturate
from deadlam.lam import BULLET, CHECK, ConjState, Dep, rename
from deadlam.solver import closure, step_summary

CASES = 1000

names = st.sampled_from("abcde")
labels = st.sampled_from(["t", "s", "u", BULLET, CHECK])
deps = st.builds(Dep, names, names, labels)
states = st.frozensets(deps, max_size=8).map(lambda d: ConjState(d))
seeds = st.integers(min_value=0, max_value=2**32 - 1)

common = settings(max_examples=CASES, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def program_from(seed):
    return parse_lam(random_program(random.Random(seed)).text())


@common
@given(states)
def test_closure_is_extensive(s):
    assert s.deps <= closure(s).deps


@common
@given(states)
def test_closure_is_idempotent(s):
    once = closure(s)
    assert closure(once) == once


@common
@given(states, states)
def test_closure_is_monotone(s, t):
    union = ConjState(s.deps | t.deps)
    assert closure(s).deps <= closure(union).deps


@common
@given(seeds)
def test_saturation_is_stable(seed):
    program = program_from(seed)
    summary = saturate(program).summary
    later = summary
    for _ in range(3):
        later = step_summary(program, later)
    assert later == summary


@common
@given(seeds, st.randoms(use_true_random=False))
def test_verdict_invariant_under_renaming(seed, rnd):
    program = program_from(seed)
    before = analyze(program)
    pool = [f"n{k}" for k in range(40)]
    rnd.shuffle(pool)
    used = sorted({n for d in program.defs.values() for n in d.formals()} | _main_names(program))
    mapping = dict(zip(used, pool))
    renamed = parse_lam(_renamed_text(program, mapping))
    after = analyze(renamed)
    assert before.deadlock_free == after.deadlock_free
    assert len(before.circularities) == len(after.circularities)


def _main_names(program):
    from deadlam.lam import term_names
    out = term_names(program.main)
    for d in program.defs.values():
        out |= term_names(d.body)
    return out


def _renamed_text(program, mapping):
    from deadlam.lam import LamDef, LamProgram, print_lam, rename_stype, substitute_name

    def f(n):
        return substitute_name(n, mapping)

    def term(t):
        return _rename_all(t, mapping)

    defs = {}
    for name, d in program.defs.items():
        defs[name] = LamDef(name, tuple(rename_stype(r, f) for r in d.params),
                            tuple(rename_stype(r, f) for r in d.ret), term(d.body))
    return print_lam(LamProgram(defs, term(program.main)))


def _rename_all(t, mapping):
    """Rename bound and free names alike."""
    from deadlam.lam import And, Nu, Or, conj, disj, nu
    if isinstance(t, Nu):
        return nu([mapping.get(n, n) for n in t.names], _rename_all(t.body, mapping))
    if isinstance(t, And):
        return conj(*(_rename_all(x, mapping) for x in t.items))
    if isinstance(t, Or):
        return disj(*(_rename_all(x, mapping) for x in t.items))
    return rename(t, mapping)
