"""The same iteration, run by agents that only talk to their neighbours.

The distributed engine keeps the dual of each arc at its tail agent and
exchanges four messages per active arc per round. It reproduces the
centralized iterates bit for bit.
"""

from collections import Counter

from pdmcc import CommGraph, CyclicSchedule, StepsizePolicy, make_builtin, run, spanning_tree
from pdmcc.multiagent import compare_runs, run_pdmi

graph = CommGraph.ring(6)
prob = make_builtin("penalized_feasibility", graph, n=2, seed=3)
tree = spanning_tree(graph)
sched = CyclicSchedule(graph, (tree, graph.full_set()))

central = run(prob, sched, StepsizePolicy(0.1), None, 50, record_iterates=True)
agents = run_pdmi(prob, sched, StepsizePolicy(0.1), None, 50, record_iterates=True)
print(compare_runs(central, agents))

print(f"{len(agents.ledger)} messages in total")
print("round 1 by kind:", dict(Counter(m.kind for m in agents.ledger.for_round(1))))
# the arc left out of the tree returns in round 2, so its head resends x
# (phase 0) before the tail computes the dual update
print("round 2 by phase:", dict(Counter(m.phase for m in agents.ledger.for_round(2))))
print("phase-0 syncs in round 2:", [(m.sender, m.receiver) for m in agents.ledger.for_round(2) if m.phase == 0])
