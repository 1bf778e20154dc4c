import pytest

from conftest import corpus_text
from deadlam import AssemblyError, flow_facts, parse_program, print_program
from deadlam.frontend import executed_once

OBJECT = """
class Object {
  methods:
    void init() {
      0: return
    }
}
"""


def program(body: str, params: str = "") -> str:
    return OBJECT + f"""
class A {{
  fields:
    f : Object
  methods:
    void m({params}) {{
{body}
    }}
}}
"""


def test_parses_every_corpus_program():
    for name in ("network_xy.jd", "philosophers_4.jd", "threadarrays_2.jd", "reentrant_field.jd"):
        table = parse_program(corpus_text(name))
        assert "Object" in table.classes


def test_round_trip():
    table = parse_program(corpus_text("network_xy.jd"))
    again = parse_program(print_program(table))
    assert print_program(again) == print_program(table)


def test_aliases_resolve_to_core_ops():
    src = program("""
      0: aload 0
      1: astore 1
      2: push
      3: istore 2
      4: iload 2
      5: ifne 7
      6: goto 7
      7: return""")
    m = parse_program(src).method("A.m")
    assert [m.body[i].op for i in range(7)] == ["load", "store", "push", "store", "load", "if", "goto"]
    assert m.body[0].arg == "this"


def test_named_parameters_and_numeric_slots():
    src = program("""
      0: aload 1
      1: load y
      2: pop
      3: pop
      4: return""", params="int x, Object y")
    m = parse_program(src).method("A.m")
    assert m.param_names == ("x", "y")
    assert m.body[0].arg == "x"


@pytest.mark.parametrize("body, needle", [
    ("      0: goto 5\n      1: return", "5"),
    ("      0: push", "fall"),
    ("      1: return", "0"),
    ("      0: frob\n      1: return", "frob"),
])
def test_rejects_malformed_bodies(body, needle):
    with pytest.raises(AssemblyError) as e:
        parse_program(program(body))
    assert needle in str(e.value)


def test_error_positions():
    with pytest.raises(AssemblyError) as e:
        parse_program(program("      0: frob\n      1: return"))
    assert e.value.line > 0 and e.value.col > 0


def test_rejects_recursive_class_types():
    src = OBJECT + """
class B {
  fields:
    next : B
  methods:
    void m() {
      0: return
    }
}
"""
    with pytest.raises(AssemblyError, match="recursive|cycle"):
        parse_program(src)


def test_rejects_undeclared_class():
    src = OBJECT + """
class B {
  fields:
    f : Missing
  methods:
    void m() {
      0: return
    }
}
"""
    with pytest.raises(AssemblyError):
        parse_program(src)


def test_loops_and_recursion():
    table = parse_program(corpus_text("threadarrays_2.jd"))
    facts = flow_facts(table)
    main = table.method("Main.main")
    loop = facts.in_loop["Main.main"]
    assert loop and 0 not in loop
    for i in loop:
        assert not executed_once(facts, "Main.main", i)
    assert executed_once(facts, "Main.main", 0)

    net = parse_program(corpus_text("network_xy.jd"))
    facts = flow_facts(net)
    assert "Network.buildNetwork" in facts.recursive
    assert facts.same_scc("Network.buildNetwork", "Network.buildNetwork")
    assert not facts.same_scc("Network.main", "Network.buildNetwork")
    assert any(callee.endswith(".run") for callee in facts.call_sites.values())
    assert main.body


def test_sccs_are_callees_first():
    facts = flow_facts(parse_program(corpus_text("network_xy.jd")))
    order = [m for comp in facts.sccs() for m in comp]
    assert order.index("Network.buildNetwork") < order.index("Network.main")
