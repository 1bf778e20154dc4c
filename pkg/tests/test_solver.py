import pytest

from conftest import corpus_text
from deadlam import analyze, parse_lam, saturate
from deadlam.lam import BULLET, CHECK, ConjState, Dep
from deadlam.solver import (
    SolverError,
    closure,
    compose_label,
    cycle_marker,
    has_circularity,
    project,
    specialize,
)


def verdict(text: str, **kw):
    program = parse_lam(text)
    program.validate()
    return analyze(program, **kw)


def test_label_composition():
    assert compose_label("t", "t") == "t"
    assert compose_label("t", "s") == CHECK
    assert compose_label(BULLET, BULLET) == CHECK
    assert compose_label(CHECK, CHECK) == CHECK
    assert compose_label("t", BULLET) == CHECK


def test_closure_composes_chains():
    s = ConjState(frozenset({Dep("a", "b", "t"), Dep("b", "c", "t"), Dep("c", "a", "s")}))
    closed = closure(s).deps
    assert Dep("a", "c", "t") in closed
    assert Dep("a", "a", CHECK) in closed
    assert has_circularity(s)


def test_single_thread_cycle_is_not_circular():
    s = ConjState(frozenset({Dep("a", "b", "t"), Dep("b", "a", "t")}))
    assert has_circularity(s) is None


def test_projection_anonymises_local_threads():
    s = ConjState(frozenset({Dep("x", "y", "t"), Dep("x", "z", "u")}))
    out = project(s, {"x", "y"}).deps
    assert out == {Dep("x", "y", BULLET)}


def test_projection_keeps_local_circularity():
    s = ConjState(frozenset({Dep("z", "w", "t"), Dep("w", "z", "u")}))
    closed = closure(s)
    from deadlam.solver import _project
    assert cycle_marker("f") in _project(closed.deps, frozenset({"x"}), "f")


def test_network_reference():
    assert verdict(corpus_text("network_reference.lam")).deadlock_free
    v = verdict(corpus_text("network_reference_xx.lam"))
    assert not v.deadlock_free
    assert any(c.local_to for c in v.circularities)


def test_two_threads_opposite_order():
    v = verdict("f(x, y, t) = (x,y)_t\nmain = nu a,b,t,s.( f(a, b, t) & f(b, a, s) )\n")
    assert not v.deadlock_free
    assert v.circularities[0].functions == ("f",)


def test_one_anonymous_thread_both_orders_is_free():
    assert verdict("f(x, y) = nu t.( (x,y)_t & (y,x)_t )\nmain = nu a,b.( f(a, b) )\n").deadlock_free


def test_two_anonymous_threads_deadlock():
    v = verdict("f(x, y) = nu t.( (x,y)_t )\nmain = nu a,b.( f(a, b) & f(b, a) )\n")
    assert not v.deadlock_free


def test_written_self_pairs_are_reentrant():
    assert verdict("f(x) = nu t.( (x,x)_t )\nmain = nu a.( f(a) & f(a) )\n").deadlock_free


def test_cycle_through_hidden_names_survives_projection():
    text = (
        "f(x) = nu y.( (x,y)_x & (y,x)_x & f(y) )\n"
        "main = nu a,b.( (a,b)_b & f(b) )\n"
    )
    assert not verdict(text).deadlock_free


def test_aliased_formals_are_specialised():
    text = "f(x, y, t, s) = (x,y)_t & (y,x)_s\nmain = nu a,t.( f(a, a, t, t) )\n"
    program = parse_lam(text)
    assert "f[s=t][x=y]" in specialize(program).defs
    assert verdict(text).deadlock_free
    assert not verdict("f(x, y, t, s) = (x,y)_t & (y,x)_s\nmain = nu a,b,t,s.( f(a, b, t, s) )\n").deadlock_free


def test_disjunction_needs_one_circular_summand():
    v = verdict("main = nu a,b,t,s.( ((a,b)_t & (b,a)_s) + (a,b)_t )\n")
    assert not v.deadlock_free


def test_saturation_reaches_fixpoint_for_recursion():
    program = parse_lam("f(x) = nu y.( (x,y)_x & f(y) )\nmain = nu a.( f(a) )\n")
    sat = saturate(program, keep_history=True)
    assert sat.history[-1] == sat.history[-2]


def test_state_cap():
    text = "f(x, y) = (x,y)_x + (y,x)_y\nmain = nu a,b,c,d.( f(a, b) & f(b, c) & f(c, d) & f(d, a) )\n"
    with pytest.raises(SolverError):
        verdict(text, max_states=4)


def test_verdict_json():
    v = verdict("main = nu a,b,t,s.( (a,b)_t & (b,a)_s )\n")
    js = v.to_json()
    assert js["verdict"] == "deadlock"
    assert js["circularities"]
    assert verdict("main = 0\n").to_json()["verdict"] == "deadlock-free"
