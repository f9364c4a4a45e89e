"""Communication graphs, Kirchhoff matrices and active-arc schedules.

Each unordered pair of agents ``{s, t}`` with ``s < t`` is stored once as the
oriented arc ``(s, t)``.  Arcs are numbered in lexicographic order, so the
arc index set of a graph with ``l`` arcs is ``range(l)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree

from .blocks import ArcConstraintSystem, IndexSet

__all__ = [
    "CommGraph",
    "kirchhoff",
    "max_degree",
    "is_connected",
    "spanning_tree",
    "StaticSchedule",
    "CyclicSchedule",
    "RandomWithCoreSchedule",
    "AdversarialSchedule",
    "schedule_next",
]


@dataclass(frozen=True)
class CommGraph:
    """Undirected communication graph with a fixed arc orientation ``s < t``."""

    m: int
    arcs: tuple = ()

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"a graph needs at least one vertex, got m={self.m}")
        arcs = tuple((int(s), int(t)) for s, t in self.arcs)
        for s, t in arcs:
            if not 0 <= s < t < self.m:
                raise ValueError(f"arc ({s}, {t}) must satisfy 0 <= s < t < m={self.m}")
        if len(set(arcs)) != len(arcs):
            raise ValueError("duplicate arcs in graph")
        if list(arcs) != sorted(arcs):
            raise ValueError("arcs must be in lexicographic order; use CommGraph.from_edges")
        object.__setattr__(self, "arcs", arcs)

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[Sequence[int]]) -> "CommGraph":
        """Build from undirected edges in any order or orientation."""
        arcs = set()
        for e in edges:
            s, t = int(e[0]), int(e[1])
            if s == t:
                raise ValueError(f"self-loop ({s}, {t}) is not a valid edge")
            arcs.add((min(s, t), max(s, t)))
        return cls(m, tuple(sorted(arcs)))

    @classmethod
    def complete(cls, m: int) -> "CommGraph":
        return cls(m, tuple((s, t) for s in range(m) for t in range(s + 1, m)))

    @classmethod
    def ring(cls, m: int) -> "CommGraph":
        if m < 3:
            return cls.path(m)
        return cls.from_edges(m, [(s, (s + 1) % m) for s in range(m)])

    @classmethod
    def path(cls, m: int) -> "CommGraph":
        return cls(m, tuple((s, s + 1) for s in range(m - 1)))

    @classmethod
    def star(cls, m: int, center: int = 0) -> "CommGraph":
        return cls.from_edges(m, [(center, t) for t in range(m) if t != center])

    @classmethod
    def random_gnp(cls, m: int, p: float, seed: int) -> "CommGraph":
        """Erdos-Renyi graph; each pair is present independently with probability `p`."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"edge probability must be in [0, 1], got {p}")
        rng = np.random.default_rng(seed)
        pairs = [(s, t) for s in range(m) for t in range(s + 1, m)]
        keep = rng.random(len(pairs)) < p
        return cls(m, tuple(pr for pr, k in zip(pairs, keep) if k))

    @property
    def l(self) -> int:
        return len(self.arcs)

    def arc_index(self, s: int, t: int) -> int:
        return self.arcs.index((min(s, t), max(s, t)))

    def full_set(self) -> IndexSet:
        return IndexSet.full(self.l)

    def index_set(self, members: Iterable[int] = ()) -> IndexSet:
        return IndexSet.of(self.l, members)

    def constraint_system(self, n: int) -> ArcConstraintSystem:
        return ArcConstraintSystem.consensus(self.m, n, self.arcs)

    def outgoing(self, s: int, I: IndexSet | None = None) -> list[int]:
        """Arc indices ``(s, .)`` owned by agent `s`, ascending."""
        return [i for i, (a, _) in enumerate(self.arcs) if a == s and (I is None or i in I)]

    def incoming(self, s: int, I: IndexSet | None = None) -> list[int]:
        return [i for i, (_, b) in enumerate(self.arcs) if b == s and (I is None or i in I)]

    def neighbors(self, s: int, I: IndexSet | None = None) -> list[int]:
        out = {self.arcs[i][1] for i in self.outgoing(s, I)}
        out |= {self.arcs[i][0] for i in self.incoming(s, I)}
        return sorted(out)


def _check(graph: CommGraph, I: IndexSet):
    if I.universe_size != graph.l:
        raise ValueError(f"index set universe {I.universe_size} != number of arcs {graph.l}")


def kirchhoff(graph: CommGraph, I: IndexSet) -> np.ndarray:
    """Graph Laplacian (degree minus adjacency) of the active edges."""
    _check(graph, I)
    H = np.zeros((graph.m, graph.m))
    for i in I:
        s, t = graph.arcs[i]
        H[s, s] += 1.0
        H[t, t] += 1.0
        H[s, t] -= 1.0
        H[t, s] -= 1.0
    return H


def max_degree(graph: CommGraph, I: IndexSet) -> int:
    _check(graph, I)
    deg = np.zeros(graph.m, dtype=int)
    for i in I:
        s, t = graph.arcs[i]
        deg[s] += 1
        deg[t] += 1
    return int(deg.max())


def _labels(graph: CommGraph, I: IndexSet) -> np.ndarray:
    idx = list(I)
    rows = [graph.arcs[i][0] for i in idx]
    cols = [graph.arcs[i][1] for i in idx]
    adj = coo_matrix((np.ones(len(idx)), (rows, cols)), shape=(graph.m, graph.m))
    return connected_components(adj, directed=False)[1]


def is_connected(graph: CommGraph, I: IndexSet) -> bool:
    """Whether the active edges connect all `m` vertices."""
    _check(graph, I)
    return len(set(_labels(graph, I).tolist())) == 1


def spanning_tree(graph: CommGraph, I: IndexSet | None = None) -> IndexSet:
    """A spanning forest of the active edges, preferring low arc indices."""
    I = graph.full_set() if I is None else I
    _check(graph, I)
    idx = list(I)
    if not idx:
        return IndexSet.empty(graph.l)
    rows = [graph.arcs[i][0] for i in idx]
    cols = [graph.arcs[i][1] for i in idx]
    weights = np.asarray(idx, dtype=float) + 1.0
    tree = minimum_spanning_tree(coo_matrix((weights, (rows, cols)), shape=(graph.m, graph.m)))
    tree = tree.tocoo()
    return graph.index_set(graph.arc_index(int(s), int(t)) for s, t in zip(tree.row, tree.col))


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class StaticSchedule:
    graph: CommGraph
    active_set: IndexSet

    def active(self, k: int) -> IndexSet:
        return self.active_set


@dataclass(frozen=True)
class CyclicSchedule:
    """Visit `sets` in order, repeating with period ``len(sets)``."""

    graph: CommGraph
    sets: tuple

    def __post_init__(self):
        if not self.sets:
            raise ValueError("cyclic schedule needs at least one index set")
        object.__setattr__(self, "sets", tuple(self.sets))

    def active(self, k: int) -> IndexSet:
        return self.sets[(k - 1) % len(self.sets)]


@dataclass(frozen=True)
class RandomWithCoreSchedule:
    """Core arcs always active; every other arc joins independently.

    The draw for iteration `k` comes from a Philox counter-based generator
    keyed by ``(seed, k)``, so any iteration can be evaluated on its own.
    """

    graph: CommGraph
    core: IndexSet
    extra_probability: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.extra_probability <= 1.0:
            raise ValueError(f"extra_probability must be in [0, 1], got {self.extra_probability}")
        _check(self.graph, self.core)

    def active(self, k: int) -> IndexSet:
        key = np.random.SeedSequence([int(self.seed), int(k)]).generate_state(2, dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        draws = rng.random(self.graph.l)
        extra = [i for i in range(self.graph.l) if draws[i] < self.extra_probability]
        return self.core.union(self.graph.index_set(extra))


@dataclass(frozen=True)
class AdversarialSchedule:
    """A scripted sequence; the last set repeats forever."""

    graph: CommGraph
    sets: tuple

    def __post_init__(self):
        if not self.sets:
            raise ValueError("adversarial schedule needs at least one index set")
        object.__setattr__(self, "sets", tuple(self.sets))

    def active(self, k: int) -> IndexSet:
        return self.sets[min(k, len(self.sets)) - 1]


def schedule_next(sched, k: int) -> IndexSet:
    """Active arc set ``I_k`` for iteration ``k >= 1``."""
    if k < 1:
        raise ValueError(f"iterations are numbered from 1, got k={k}")
    return sched.active(k)
