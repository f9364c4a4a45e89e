"""Round-synchronous simulation of the decentralized primal-dual method.

Agent ``s`` owns its block ``x_s`` and the duals ``y_i, p_i`` of its
outgoing arcs ``i = (s, t)``.  One round with active set ``I`` and
stepsize ``lam`` runs three phases separated by barriers:

1. owners compute ``p_i = y_i + lam (x_s - x_t)`` and send it to ``t``;
2. every agent aggregates ``v_s = sum_out p_i - sum_in p_i``, solves its
   local prox and sends the new ``x_s`` to each active neighbour;
3. owners compute ``y_i = y_i + lam (x_s - x_t)`` and send it to ``t``.

Messages travel only along active arcs and are recorded in a
:class:`MessageLedger`.  Before phase 1, the head ``t`` of an arc that was
inactive in the previous round sends its current ``x_t`` to the owner
(a phase-0 ``x-report``), since the owner's cached copy is stale.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .blocks import DualVector, IndexSet, as_block_vector
from .pdm import (
    RunResult,
    PdmState,
    StepsizeCache,
    StepsizePolicy,
    StoppingRule,
    _ref_distance,
    inner_tolerance,
    make_record,
)
from .problems import ProblemInstance, ProxNotConverged
from .topology import CommGraph, schedule_next

__all__ = [
    "ProtocolError",
    "AgentProxError",
    "Message",
    "MessageLedger",
    "AgentState",
    "make_agents",
    "pdmi_round",
    "run_pdmi",
    "compare_runs",
    "CompareReport",
    "PdmiResult",
]

P_REPORT, X_REPORT, Y_REPORT = "p-report", "x-report", "y-report"


class ProtocolError(RuntimeError):
    """An agent tried to use a value it was never sent."""


class AgentProxError(RuntimeError):
    def __init__(self, agent, cause):
        super().__init__(f"agent {agent}: local prox failed: {cause}")
        self.agent = agent
        self.cause = cause


@dataclass(frozen=True)
class Message:
    round: int
    phase: int
    sender: int
    receiver: int
    kind: str
    arc: int
    payload: np.ndarray = field(repr=False, compare=False)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.payload, dtype=np.float64).tobytes()).hexdigest()

    def as_json(self) -> dict:
        return {"round": self.round, "phase": self.phase, "sender": self.sender,
                "receiver": self.receiver, "kind": self.kind, "arc": self.arc,
                "payload_sha256": self.digest()}


class MessageLedger:
    """Append-only log of every message sent during a simulation."""

    def __init__(self):
        self.messages: list[Message] = []

    def extend(self, msgs):
        self.messages.extend(msgs)

    def __len__(self):
        return len(self.messages)

    def for_round(self, k: int) -> list[Message]:
        return [msg for msg in self.messages if msg.round == k]

    def count(self, round: int | None = None, kind: str | None = None) -> int:
        return sum(1 for msg in self.messages
                   if (round is None or msg.round == round) and (kind is None or msg.kind == kind))

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for msg in self.messages:
                fh.write(json.dumps(msg.as_json()) + "\n")


class NeighborCache:
    """Values received from neighbours, keyed by arc.

    Only arcs incident to the owning agent are accepted, and reads record
    which keys were touched so tests can audit information flow.
    """

    def __init__(self, agent: int, incident: dict[int, int]):
        self.agent = agent
        self.incident = incident  # arc -> other endpoint
        self.x: dict[int, np.ndarray] = {}
        self.p: dict[int, np.ndarray] = {}
        self.y: dict[int, np.ndarray] = {}
        self.reads: list[tuple[str, int]] = []

    def store(self, msg: Message):
        if msg.receiver != self.agent:
            raise ProtocolError(f"message for agent {msg.receiver} delivered to agent {self.agent}")
        if self.incident.get(msg.arc) != msg.sender:
            raise ProtocolError(
                f"agent {self.agent} received {msg.kind} over arc {msg.arc} from agent {msg.sender}, "
                "which is not the other endpoint of an incident arc"
            )
        slot = {X_REPORT: self.x, P_REPORT: self.p, Y_REPORT: self.y}[msg.kind]
        slot[msg.arc] = np.array(msg.payload)

    def read(self, kind: str, arc: int) -> np.ndarray:
        if arc not in self.incident:
            raise ProtocolError(f"agent {self.agent} read arc {arc}, which is not incident to it")
        slot = {X_REPORT: self.x, P_REPORT: self.p, Y_REPORT: self.y}[kind]
        self.reads.append((kind, arc))
        try:
            return slot[arc]
        except KeyError:
            raise ProtocolError(
                f"agent {self.agent} has no {kind} for arc {arc}; stale neighbour cache"
            ) from None

    def drop(self, arcs):
        for arc in arcs:
            self.x.pop(arc, None)
            self.p.pop(arc, None)
            self.y.pop(arc, None)


class AgentState:
    """Local state and oracles of one agent."""

    def __init__(self, agent: int, x, f, feasible, outgoing: dict[int, int], incoming: dict[int, int]):
        self.id = agent
        self.x = np.array(x, dtype=np.float64)
        self.f = f
        self.feasible = feasible
        self.outgoing = dict(sorted(outgoing.items()))  # arc -> head t
        self.incoming = dict(sorted(incoming.items()))  # arc -> tail s
        self.owned_duals: dict[int, np.ndarray] = {}
        self.owned_p: dict[int, np.ndarray] = {}
        self.cache = NeighborCache(agent, {**self.outgoing, **self.incoming})

    def _msg(self, k, phase, receiver, kind, arc, payload):
        return Message(k, phase, self.id, receiver, kind, arc, np.array(payload))

    def start_round(self, I: IndexSet):
        """Forget duals and cached values of arcs that are not active in `I`."""
        for arc in [a for a in self.owned_duals if a not in I]:
            del self.owned_duals[arc]
        self.owned_p.clear()
        self.cache.drop([a for a in self.cache.incident if a not in I])

    def sync(self, k: int, I: IndexSet, newly_active) -> list[Message]:
        return [self._msg(k, 0, s, X_REPORT, arc, self.x)
                for arc, s in self.incoming.items() if arc in I and arc in newly_active]

    def phase1(self, k: int, I: IndexSet, lam: float) -> list[Message]:
        out = []
        for arc, t in self.outgoing.items():
            if arc not in I:
                continue
            y_prev = self.owned_duals.get(arc, np.zeros_like(self.x))
            p = y_prev + lam * (self.x - self.cache.read(X_REPORT, arc))
            self.owned_p[arc] = p
            out.append(self._msg(k, 1, t, P_REPORT, arc, p))
        return out

    def phase2(self, k: int, I: IndexSet, lam: float, tol: float) -> list[Message]:
        plus = np.zeros_like(self.x)
        minus = np.zeros_like(self.x)
        for arc in self.outgoing:
            if arc in I:
                plus += self.owned_p[arc]
        for arc in self.incoming:
            if arc in I:
                minus += self.cache.read(P_REPORT, arc)
        v = plus - minus
        try:
            self.x = self.f.prox(v, self.x, lam, self.feasible, tol)
        except (ProxNotConverged, NotImplementedError) as exc:
            raise AgentProxError(self.id, exc) from exc
        return [self._msg(k, 2, other, X_REPORT, arc, self.x)
                for arc, other in sorted({**self.outgoing, **self.incoming}.items()) if arc in I]

    def phase3(self, k: int, I: IndexSet, lam: float) -> list[Message]:
        out = []
        for arc, t in self.outgoing.items():
            if arc not in I:
                continue
            y_prev = self.owned_duals.get(arc, np.zeros_like(self.x))
            y = y_prev + lam * (self.x - self.cache.read(X_REPORT, arc))
            self.owned_duals[arc] = y
            out.append(self._msg(k, 3, t, Y_REPORT, arc, y))
        return out


def make_agents(prob: ProblemInstance, x0=None, y0: DualVector | None = None) -> list[AgentState]:
    """One agent per block of a consensus-form problem."""
    graph = _graph_of(prob)
    x0 = np.zeros((prob.m, prob.n)) if x0 is None else as_block_vector(x0, prob.m, prob.n, "x0")
    x0 = prob.project(x0)
    agents = []
    for s in range(prob.m):
        out = {i: graph.arcs[i][1] for i in graph.outgoing(s)}
        inc = {i: graph.arcs[i][0] for i in graph.incoming(s)}
        agents.append(AgentState(s, x0[s], prob.blocks[s], prob.feasible[s], out, inc))
    if y0 is not None:
        for arc, val in zip(y0.active, y0.values):
            agents[graph.arcs[arc][0]].owned_duals[arc] = np.array(val)
    return agents


def _graph_of(prob: ProblemInstance) -> CommGraph:
    sys = prob.constraints
    if not sys.is_consensus:
        raise ValueError("the distributed method needs consensus constraints x_s = x_t with b = 0")
    return prob.graph if prob.graph is not None else CommGraph(prob.m, tuple(sys.arcs))


def _deliver(agents, msgs):
    for msg in msgs:
        agents[msg.receiver].cache.store(msg)


def pdmi_round(agents: Sequence[AgentState], I: IndexSet, lam: float, tol: float = 1e-10, *,
               k: int = 1, newly_active: IndexSet | None = None, order: Sequence[int] | None = None,
               timings: dict | None = None):
    """Execute one synchronous round; agents are updated in place.

    Parameters
    ----------
    agents : sequence of AgentState
    I : IndexSet
        Active arcs for this round (global round metadata).
    lam : float
        Stepsize for this round.
    tol : float
        Inner prox tolerance.
    k : int
        Round number stamped on messages.
    newly_active : IndexSet, optional
        Arcs active now but not in the previous round; their heads resend
        ``x`` in phase 0.
    order : sequence of int, optional
        Agent processing order within each phase.  Results do not depend on it.
    timings : dict, optional
        Accumulates wall time per phase.

    Returns
    -------
    agents, messages
    """
    order = range(len(agents)) if order is None else order
    sent = []

    def phase(name, fn):
        t0 = time.perf_counter()
        msgs = []
        for s in order:
            msgs.extend(fn(agents[s]))
        _deliver(agents, msgs)  # barrier
        sent.extend(msgs)
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0

    for a in agents:
        a.start_round(I)
    if newly_active is not None and len(newly_active):
        phase("phase0", lambda a: a.sync(k, I, newly_active))
    phase("phase1", lambda a: a.phase1(k, I, lam))
    phase("phase2", lambda a: a.phase2(k, I, lam, tol))
    phase("phase3", lambda a: a.phase3(k, I, lam))
    return agents, sent


def _gather(agents, l: int, n: int, I: IndexSet):
    """Observer view of the global iterate; agents never call this."""
    x = np.stack([a.x for a in agents])
    ydense = np.zeros((l, n))
    pdense = np.zeros((l, n))
    for a in agents:
        for arc, val in a.owned_duals.items():
            ydense[arc] = val
        for arc, val in a.owned_p.items():
            pdense[arc] = val
    return x, DualVector.from_dense(ydense, I), DualVector.from_dense(pdense, I)


@dataclass
class PdmiResult(RunResult):
    ledger: MessageLedger = field(default_factory=MessageLedger)
    agents: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def run_pdmi(prob: ProblemInstance, schedule, policy: StepsizePolicy,
             stop: StoppingRule | None = StoppingRule(), budget: int = 10_000, *,
             x0=None, y0: DualVector | None = None, record_iterates: bool = False,
             lam_override: float | None = None, lambdas: Sequence[float] | None = None,
             order: Sequence[int] | None = None) -> PdmiResult:
    """Run the distributed method; same arguments and stopping logic as :func:`pdmcc.pdm.run`.

    Round 0 is the initial broadcast of ``x^0`` over the arcs of ``I_1``.
    """
    if budget < 1:
        raise ValueError(f"budget must be at least 1, got {budget}")
    sys = prob.constraints
    graph = _graph_of(prob)
    agents = make_agents(prob, x0, y0)
    lam_of = StepsizeCache(policy, sys, lam_override)
    x, y, p = _gather(agents, sys.l, prob.n, y0.active if y0 is not None else IndexSet.empty(sys.l))
    state = PdmState(0, x, y, p, y.active, math.nan)
    result = PdmiResult(state, [], "budget", _ref_distance(prob, x, y.dense()), agents=agents)
    if record_iterates:
        result.iterates.append((x.copy(), y.dense()))

    I_prev = schedule_next(schedule, 1)
    init = [Message(0, 0, a.id, other, X_REPORT, arc, np.array(a.x))
            for a in agents for arc, other in sorted(a.cache.incident.items()) if arc in I_prev]
    _deliver(agents, init)
    result.ledger.extend(init)

    prev_step = None
    for k in range(1, budget + 1):
        I = schedule_next(schedule, k)
        lam = lambdas[k - 1] if lambdas is not None else lam_of(I)
        _, msgs = pdmi_round(agents, I, lam, inner_tolerance(prev_step), k=k,
                             newly_active=I.difference(I_prev), order=order,
                             timings=result.timings)
        result.ledger.extend(msgs)
        x_new, y_new, p_new = _gather(agents, sys.l, prob.n, I)
        rec = make_record(prob, k, lam, x_new, state.x, y_new, state.y, p_new, I)
        result.trace.append(rec)
        result.lambdas.append(lam)
        if record_iterates:
            result.iterates.append((x_new.copy(), y_new.dense()))
        state = PdmState(k, x_new, y_new, p_new, I, lam)
        prev_step = rec.step_norm
        I_prev = I
        if stop is not None and stop.satisfied(rec):
            result.stop_reason = "converged"
            break
    result.state = state
    return result


@dataclass(frozen=True)
class CompareReport:
    max_x_diff: float
    max_y_diff: float
    iterations: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_x_diff <= self.tol and self.max_y_diff <= self.tol

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max |x diff| = {self.max_x_diff:.3e}, max |y diff| = {self.max_y_diff:.3e} "
                f"over {self.iterations} iterations (tol {self.tol:g})")


def compare_runs(a: RunResult, b: RunResult, tol: float = 1e-12) -> CompareReport:
    """Largest iterate-wise deviation between two recorded runs."""
    if not a.iterates or not b.iterates:
        raise ValueError("both runs must be made with record_iterates=True")
    if len(a.iterates) != len(b.iterates):
        raise ValueError(f"runs differ in length: {len(a.iterates)} vs {len(b.iterates)} iterates")
    dx = max(float(np.linalg.norm(xa - xb)) for (xa, _), (xb, _) in zip(a.iterates, b.iterates))
    dy = max(float(np.linalg.norm(ya - yb)) for (_, ya), (_, yb) in zip(a.iterates, b.iterates))
    return CompareReport(dx, dy, len(a.iterates) - 1, tol)
