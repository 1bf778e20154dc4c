"""Benchmark families at N = 2, 4, 8, against the concrete oracle.

The number of circularities should not grow with N: the analysis reasons
about allocation sites, not individual objects.  The oracle, which explores
every schedule, runs out of threads for the larger instances.

    python demos/families.py
"""

from deadlam.cli import compare_one, corpus_entries, load_table, run_analysis
from deadlam.oracle import Bounds

print(f"{'program':<22} {'circularities':>13}  oracle")
for e in corpus_entries():
    if e["expect"] == "error" or e["name"].startswith(("reentrant", "network")):
        continue
    table = load_table(e["path"])
    count = len(run_analysis(table, e.get("entry")).verdict.circularities)
    row = compare_one(e["name"], table, e.get("entry"), e.get("args", []), Bounds(max_threads=6))
    shown = row.oracle if row.exhausted else "bounds hit"
    print(f"{e['name']:<22} {count:>13}  {shown}")
