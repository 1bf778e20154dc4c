import pytest

from conftest import CORPUS, corpus_text, manifest
from deadlam import TypingError, flow_facts, infer_bct, parse_program
from deadlam.cli import run_analysis
from deadlam.typesystem import default_entry

ENTRIES = manifest()


def test_manifest_lists_every_program():
    listed = {e["file"] for e in ENTRIES}
    shipped = {p.name for p in CORPUS.iterdir() if p.name.endswith(".jd")}
    assert listed == shipped
    assert len(ENTRIES) >= 15


@pytest.mark.parametrize("entry", ENTRIES, ids=[e["name"] for e in ENTRIES])
def test_expected_verdict(entry):
    table = parse_program(corpus_text(entry["file"]))
    if entry["expect"] == "error":
        with pytest.raises(TypingError):
            infer_bct(table, flow_facts(table), default_entry(table))
        return
    report = run_analysis(table, entry.get("entry"))
    got = "deadlock-free" if report.verdict.deadlock_free else "deadlock"
    assert got == entry["expect"]
