"""Links come and go, but a spanning tree stays up.

A random subset of extra links is switched on at every step on top of a fixed
spanning tree. Because every active set contains the tree, each one is
basic, and the iterates still settle on a saddle point of the full problem.
"""

import numpy as np

from pdmcc import (CommGraph, RandomWithCoreSchedule, StepsizePolicy, StoppingRule, make_builtin, run,
                   spanning_tree)

graph = CommGraph.complete(8)
prob = make_builtin("quadratic_consensus", graph, n=2, seed=5)
tree = spanning_tree(graph)
sched = RandomWithCoreSchedule(graph, tree, extra_probability=0.3, seed=1)

print("active arcs in the first five steps:")
for k in range(1, 6):
    print(f"  k={k}: {list(sched.active(k))}")

# one stepsize that is valid for every active set, since no degree exceeds m - 1
policy = StepsizePolicy(0.1, "fixed_upper_bound", degree_bound=graph.m - 1)
res = run(prob, sched, policy, StoppingRule(1e-8), 20_000)
mean = np.mean([f.c for f in prob.blocks], axis=0)
print(f"{res.stop_reason} after {res.iterations} iterations, "
      f"max deviation from the mean {np.max(np.abs(res.state.x - mean)):.2e}")
counts = [rec.active_count for rec in res.trace]
print(f"active arcs per step ranged from {min(counts)} to {max(counts)} of {graph.l}")
