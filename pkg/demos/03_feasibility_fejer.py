"""Distance to a saddle point never goes up.

For a feasibility problem with a known common point x_bar, (x_bar, 0) is a
saddle point for every active set, so the weighted distance to it must be
non-increasing whatever the schedule does. We check this step by step and
then show what happens when the stepsize is pushed past its bound.
"""

import numpy as np

from pdmcc import (CommGraph, RandomWithCoreSchedule, StepsizePolicy, check_fejer, make_builtin, run,
                   spanning_tree)

tau = 0.1
graph = CommGraph.complete(8)
prob = make_builtin("penalized_feasibility", graph, n=3, seed=11)
sched = RandomWithCoreSchedule(graph, spanning_tree(graph), 0.3, seed=4)
policy = StepsizePolicy(tau, "fixed_upper_bound", degree_bound=graph.m - 1)
x0 = 5.0 * np.random.default_rng(4).standard_normal((graph.m, 3))

res = run(prob, sched, policy, None, 2000, x0=x0)
print(check_fejer(res, tau))
d = [res.initial_dist_to_ref] + [rec.dist_to_ref for rec in res.trace]
for k in (0, 10, 100, 1000, 2000):
    print(f"  k={k:4d}  distance {d[k]:.3e}")

# ten times the admissible stepsize breaks the guarantee quickly
lam = res.lambdas[0]
bad = run(prob, sched, policy, None, 20, x0=x0, lam_override=10 * lam)
print(f"with lambda = {10 * lam:.3f}: {check_fejer(bad, tau)}")
