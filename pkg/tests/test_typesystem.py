import pytest

from conftest import corpus_text
from deadlam import TypingError, flow_facts, infer_bct, parse_program
from deadlam.lam import Dep, Invoke, atoms, dnf, freshen, FreshNames, run_function
from deadlam.typesystem import default_entry

OBJECT = """
class Object {
  methods:
    void init() {
      0: return
    }
}
"""


def infer(text: str):
    table = parse_program(text)
    return infer_bct(table, flow_facts(table), default_entry(table))


def calls(term):
    return [a.fn for a in atoms(term) if isinstance(a, Invoke)]


def deps(term):
    return {a for a in atoms(term) if isinstance(a, Dep)}


def test_take_forks_is_two_dependencies():
    body = infer(corpus_text("network_xy.jd")).bct["Network.takeForks"].body
    found = deps(body)
    assert len(found) == 2 and not calls(body)
    t = {d.thread for d in found}
    assert len(t) == 1
    (last,) = [d for d in found if d.holder.startswith("$")]
    (inner,) = found - {last}
    assert last.wanted == inner.holder


def test_recursive_thread_creation_uses_run_many():
    body = infer(corpus_text("network_xy.jd")).bct["Network.buildNetwork"].body
    summands = [s.to_lam() for s in dnf(freshen(body, FreshNames()))]
    pairs = [calls(s) for s in summands]
    assert any("Network.buildNetwork" in c and run_function("Network$1") in c for c in pairs)


def test_thread_started_once_uses_run():
    program = infer(corpus_text("philosophers_pair.jd")).program
    main = program.defs["Table.main"].body
    runs = {a.args[0].root for a in atoms(main) if isinstance(a, Invoke) and a.fn == "Philosopher.run"}
    assert len(runs) == 2
    assert run_function("Philosopher") not in calls(main)


def test_thread_started_in_loop_uses_run_many():
    program = infer(corpus_text("threadarrays_2.jd")).program
    assert run_function("Worker") in program.defs


def test_nested_locking_gives_self_pair():
    body = infer(corpus_text("reentrant_nested.jd")).bct["Box.main"].body
    assert any(d.holder == d.wanted == "this" for d in deps(body))


def test_program_validates_and_reaches_fixpoint():
    inference = infer(corpus_text("chain_network.jd"))
    inference.program.validate()
    assert all(n >= 1 for n in inference.iterations.values())


def test_unbalanced_exit_is_located():
    with pytest.raises(TypingError) as e:
        infer(corpus_text("unbalanced_exit.jd"))
    assert e.value.method == "Bad.main"
    assert e.value.address == 1
    assert e.value.record()["address"] == 1


def test_stack_depth_mismatch_at_join():
    src = OBJECT + """
class A {
  methods:
    void main(int n) {
      0: load n
      1: if 4
      2: push
      3: goto 4
      4: return
    }
}
"""
    with pytest.raises(TypingError, match="stack"):
        infer(src)


def test_lock_held_at_return():
    src = OBJECT + """
class A {
  methods:
    void main() {
      0: load this
      1: monitorenter
      2: return
    }
}
"""
    with pytest.raises(TypingError):
        infer(src)


def test_putfield_outside_constructor():
    src = OBJECT + """
class A {
  fields:
    f : Object
  methods:
    void main() {
      0: load this
      1: new Object
      2: putfield A.f:Object
      3: return
    }
}
"""
    with pytest.raises(TypingError, match="putfield|read-only|constructor"):
        infer(src)


def test_no_single_main():
    src = OBJECT + """
class A {
  methods:
    void f() {
      0: return
    }
}
"""
    with pytest.raises(TypingError, match="main"):
        infer(src)
