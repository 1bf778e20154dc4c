"""The dining-philosophers network, built recursively.

buildNetwork(n, x, y) spawns a thread that takes forks x and z, then recurses
on z and y.  Passing two distinct forks gives a chain, which cannot deadlock.
Passing the same fork twice closes the chain into a ring, which can.

    python demos/network.py
"""

from importlib import resources

from deadlam import analyze, flow_facts, infer_bct, parse_program, print_lam
from deadlam.oracle import Bounds, explore

corpus = resources.files("deadlam") / "corpus"

for name in ("network_xy.jd", "network_xx.jd"):
    table = parse_program((corpus / name).read_text(encoding="utf-8"))
    entry = "Network.main"
    inference = infer_bct(table, flow_facts(table), entry)

    print(f"== {name}")
    if name == "network_xy.jd":
        # the lam of one method, as the type system infers it
        lams = print_lam(inference.program).splitlines()
        print("takeForks:", next(line for line in lams if line.startswith("Network.takeForks")))

    verdict = analyze(inference.program)
    print("static:", verdict.report().rstrip())

    # the oracle runs every schedule of a 2-philosopher instance
    result = explore(table, entry, [2], Bounds())
    print(f"oracle: {'deadlock' if result.deadlocked else 'no deadlock'} "
          f"({result.configurations} configurations, exhaustive={result.exhausted})")
    if result.deadlocks:
        for tid, method, pc, ins in result.deadlocks[0][-4:]:
            print(f"    {tid:>6}  {method}@{pc}: {ins}")
    print()
