"""Shared oracles and fixtures.

The oracles here are written directly from the mathematical definitions
with dense matrices and explicit loops, independently of the library code
paths they check.
"""

import itertools

import numpy as np
import pytest

from pdmcc import CommGraph


def dense_incidence(m, n, arcs, members=None):
    """Rows ``A_i x = x_s - x_t`` stacked for arcs in `members` (all by default)."""
    members = range(len(arcs)) if members is None else members
    A = np.zeros((len(arcs) * n, m * n))
    for i in members:
        s, t = arcs[i]
        for j in range(n):
            A[i * n + j, s * n + j] = 1.0
            A[i * n + j, t * n + j] = -1.0
    return A


def dense_laplacian(m, arcs, members):
    H = np.zeros((m, m))
    for i in members:
        s, t = arcs[i]
        H[s, s] += 1
        H[t, t] += 1
        H[s, t] -= 1
        H[t, s] -= 1
    return H


def reachable_all(m, arcs, members):
    """Graph search connectivity oracle."""
    if m == 1:
        return True
    adj = {v: set() for v in range(m)}
    for i in members:
        s, t = arcs[i]
        adj[s].add(t)
        adj[t].add(s)
    seen, stack = {0}, [0]
    while stack:
        v = stack.pop()
        for w in adj[v] - seen:
            seen.add(w)
            stack.append(w)
    return len(seen) == m


def all_subsets(l):
    for r in range(l + 1):
        yield from itertools.combinations(range(l), r)


def random_graph(rng, m, p=0.6):
    pairs = [(s, t) for s in range(m) for t in range(s + 1, m)]
    keep = [pr for pr in pairs if rng.random() < p]
    return CommGraph(m, tuple(keep))


@pytest.fixture
def triangle():
    return CommGraph.complete(3)


# acceptance criteria report one line each; printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
