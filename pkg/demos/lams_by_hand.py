"""Writing lams directly and asking the solver about them.

A lam abstracts a program to the locks each thread holds while it asks for
another one.  (a,b)_t reads "thread t holds a and wants b".

    python demos/lams_by_hand.py
"""

from deadlam import analyze, parse_lam
from deadlam.lam import ConjState, Dep
from deadlam.solver import closure

# Two threads taking the same two locks in opposite orders.
state = ConjState(frozenset({Dep("a", "b", "t"), Dep("b", "a", "s")}))
print("closure of (a,b)_t & (b,a)_s:")
for d in sorted(closure(state).deps):
    print("   ", d)
print("(a,a)_✓ is there: the two threads can block each other.\n")

examples = {
    "one thread, both orders": "f(x, y) = nu t.( (x,y)_t & (y,x)_t )\nmain = nu a,b.( f(a, b) )\n",
    "two threads, opposite orders": "f(x, y) = nu t.( (x,y)_t )\nmain = nu a,b.( f(a, b) & f(b, a) )\n",
    "reentrant lock": "f(x) = nu t.( (x,x)_t )\nmain = nu a.( f(a) & f(a) )\n",
    # a chain of threads, each taking its left fork then its right one
    "recursive chain": "chain(l, r) = nu t,z.( (l,z)_t & chain(z, r) )\nmain = nu a,b.( chain(a, b) )\n",
    # the same chain whose last thread takes the first fork again
    "recursive ring": "ring(l, r) = nu t,z.( (l,z)_t & ring(z, r) ) + nu t.( (l,r)_t )\n"
                      "main = nu a,b.( (a,b)_a & ring(b, a) )\n",
}
for title, text in examples.items():
    verdict = analyze(parse_lam(text))
    print(f"{title:>30}: {verdict.report().splitlines()[0]}")
