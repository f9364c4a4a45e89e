"""How big can the stepsize be on a given set of links?

The bound depends on ||A_I||, which equals the square root of the largest
Laplacian eigenvalue of the active subgraph and never exceeds sqrt(2 d),
where d is its maximum degree.
"""

import math

from pdmcc import CommGraph, EmptyStepsizeInterval, StepsizePolicy, max_degree, operator_norm, stepsize

for name, graph in [("path", CommGraph.path(8)), ("ring", CommGraph.ring(8)),
                    ("star", CommGraph.star(8)), ("complete", CommGraph.complete(8))]:
    sys_ = graph.constraint_system(2)
    I = graph.full_set()
    norm = operator_norm(sys_, I)
    d = max_degree(graph, I)
    lam = stepsize(StepsizePolicy(0.1), sys_, I)
    print(f"{name:9s} norm {norm:.4f}  sqrt(2d) {math.sqrt(2 * d):.4f}  lambda {lam:.4f}")

# dense graphs shrink the interval until it is empty
for m in (16, 32, 64):
    graph = CommGraph.complete(m)
    try:
        lam = stepsize(StepsizePolicy(0.1), graph.constraint_system(1), graph.full_set())
        print(f"K{m}: lambda {lam:.4f}")
    except EmptyStepsizeInterval as exc:
        print(f"K{m}: {exc}")
