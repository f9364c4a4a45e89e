"""Centralized primal-dual proximal iteration under changing constraints.

One iteration with active arc set ``I`` and stepsize ``lam``::

    p   = P_I[ y + lam (A x - b) ]
    x+  = argmin_{x in X}  f(x) + <p, A x - b> + ||x - x_prev||^2 / (2 lam)
    y+  = P_I[ y + lam (A x+ - b) ]

where ``P_I`` zeroes the dual blocks outside ``I``.  Stepsizes in
``[tau, sqrt(1 - tau) / (sqrt(2) ||A_I||)]`` make the distance to any common
saddle point nonincreasing; :func:`check_fejer` verifies that numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .blocks import (
    DualVector,
    IndexSet,
    apply_A,
    apply_A_transpose,
    as_block_vector,
    operator_norm,
    project_Y,
)
from .problems import ProblemInstance, objective_value, prox_primal
from .topology import schedule_next

__all__ = [
    "EmptyStepsizeInterval",
    "StepsizePolicy",
    "StoppingRule",
    "PdmState",
    "IterationRecord",
    "RunResult",
    "FejerReport",
    "stepsize",
    "stepsize_upper_bound",
    "pdm_step",
    "initial_state",
    "make_record",
    "run",
    "check_fejer",
    "TRACE_FIELDS",
]


class EmptyStepsizeInterval(ValueError):
    """``tau`` exceeds the largest admissible stepsize."""


@dataclass(frozen=True)
class StepsizePolicy:
    """How ``lam_k`` is chosen.

    mode
        ``"per_iteration_norm"`` takes the upper endpoint
        ``sqrt(1 - tau) / (sqrt(2) ||A_I||)`` for the current ``I``;
        ``"fixed_upper_bound"`` uses ``0.5 sqrt((1 - tau) / degree_bound)``,
        valid whenever the active graph's maximal degree never exceeds
        `degree_bound`; ``"constant"`` always returns `value`.
    """

    tau: float = 0.1
    mode: str = "per_iteration_norm"
    degree_bound: int | None = None
    value: float | None = None

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.mode not in ("per_iteration_norm", "fixed_upper_bound", "constant"):
            raise ValueError(f"unknown stepsize mode {self.mode!r}")
        if self.mode == "fixed_upper_bound" and (self.degree_bound is None or self.degree_bound < 1):
            raise ValueError("fixed_upper_bound needs a degree_bound >= 1")
        if self.mode == "constant" and (self.value is None or not self.value > 0):
            raise ValueError("constant stepsize must be positive")


@dataclass(frozen=True)
class StoppingRule:
    """Stop once both the full constraint residual and the step are <= epsilon."""

    epsilon: float = 1e-8

    def satisfied(self, record: "IterationRecord") -> bool:
        return record.full_residual <= self.epsilon and record.step_norm <= self.epsilon


def stepsize_upper_bound(policy: StepsizePolicy, sys, I: IndexSet, norm_tol: float = 1e-10) -> float:
    """Upper endpoint of the admissible interval (``inf`` for an empty ``I``)."""
    if policy.mode == "fixed_upper_bound":
        return 0.5 * math.sqrt((1.0 - policy.tau) / policy.degree_bound)
    if not len(I):
        return math.inf
    norm = operator_norm(sys, I, norm_tol)
    if norm == 0.0:
        return math.inf
    return math.sqrt(1.0 - policy.tau) / (math.sqrt(2.0) * norm)


def stepsize(policy: StepsizePolicy, sys, I: IndexSet, norm_tol: float = 1e-10) -> float:
    """Stepsize ``lam`` for active set `I` under `policy`.

    With an empty active set no dual motion happens and ``tau`` is returned
    in the norm-based mode.  Raises :class:`EmptyStepsizeInterval` when the
    upper endpoint falls below ``tau``.
    """
    if policy.mode == "constant":
        return float(policy.value)
    if policy.mode == "per_iteration_norm" and not len(I):
        return policy.tau
    upper = stepsize_upper_bound(policy, sys, I, norm_tol)
    if upper < policy.tau:
        raise EmptyStepsizeInterval(
            f"stepsize interval [{policy.tau}, {upper:.6g}] is empty; lower tau"
        )
    return upper


@dataclass(frozen=True)
class PdmState:
    """Iterate ``(x^k, y^k)`` with the dual predictor ``p^k`` and ``I_k``."""

    k: int
    x: np.ndarray
    y: DualVector
    p_last: DualVector
    active: IndexSet
    lam: float


@dataclass(frozen=True)
class IterationRecord:
    k: int
    lam: float
    objective: float
    primal_residual: float
    full_residual: float
    step_norm: float
    p_minus_y: float
    p_minus_yprev: float
    dist_to_ref: float
    active_count: int

    def as_row(self) -> list:
        return [getattr(self, f) for f in _RECORD_ATTRS]


TRACE_FIELDS = ("k", "lambda", "objective", "primal_residual", "full_residual", "step_norm",
                "p_minus_y", "p_minus_yprev", "dist_to_ref", "active_count")
_RECORD_ATTRS = ("k", "lam") + TRACE_FIELDS[2:]


@dataclass
class RunResult:
    """Outcome of :func:`run` (and of the distributed engine).

    `iterates` holds ``(x^k, dense y^k)`` pairs, starting with ``k = 0``,
    when the run was asked to record them.
    """

    state: PdmState
    trace: list
    stop_reason: str
    initial_dist_to_ref: float = math.nan
    iterates: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.stop_reason == "converged"

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def final_active(self) -> IndexSet:
        return self.state.active


def pdm_step(prob: ProblemInstance, state: PdmState, I_next: IndexSet, lam: float,
             tol: float = 1e-10) -> PdmState:
    """Advance one iteration with active set `I_next` and stepsize `lam`.

    Dual blocks outside ``state.y.active`` read as zero, so an arc that
    re-enters the active set restarts its multiplier from zero.
    """
    if not lam > 0:
        raise ValueError(f"stepsize must be positive, got {lam}")
    sys = prob.constraints
    sys.check_index_set(I_next, "I_next")
    full = IndexSet.full(sys.l)
    y_prev = state.y.dense()
    p = project_Y(I_next, DualVector(full, y_prev + lam * (apply_A(sys, full, state.x) - sys.b)))
    x_new = prox_primal(prob, apply_A_transpose(sys, I_next, p), state.x, lam, tol)
    y = project_Y(I_next, DualVector(full, y_prev + lam * (apply_A(sys, full, x_new) - sys.b)))
    return PdmState(state.k + 1, x_new, y, p, I_next, lam)


def initial_state(prob: ProblemInstance, x0=None, y0: DualVector | None = None) -> PdmState:
    sys = prob.constraints
    x0 = np.zeros((prob.m, prob.n)) if x0 is None else as_block_vector(x0, prob.m, prob.n, "x0").copy()
    x0 = prob.project(x0)
    y0 = DualVector.zeros(sys.l, prob.n) if y0 is None else y0
    return PdmState(0, x0, y0, DualVector.zeros(sys.l, prob.n), y0.active, math.nan)


def _ref_distance(prob: ProblemInstance, x, y_dense) -> float:
    ref = prob.reference
    if ref is None or ref.y is None:
        return math.nan
    return math.sqrt(float(np.sum((x - ref.x) ** 2) + np.sum((y_dense - ref.y.dense()) ** 2)))


def make_record(prob: ProblemInstance, k: int, lam: float, x, x_prev, y: DualVector,
                y_prev: DualVector, p: DualVector, active: IndexSet) -> IterationRecord:
    """Diagnostics of one iteration.  Shared by both engines."""
    sys = prob.constraints
    full = IndexSet.full(sys.l)
    res_all = apply_A(sys, full, x) - sys.b
    y_d, yp_d, p_d = y.dense(), y_prev.dense(), p.dense()
    return IterationRecord(
        k=k,
        lam=lam,
        objective=objective_value(prob, x),
        primal_residual=float(np.linalg.norm(res_all[active.as_array()])),
        full_residual=float(np.linalg.norm(res_all)),
        step_norm=float(np.linalg.norm(x - x_prev)),
        p_minus_y=float(np.linalg.norm(p_d - y_d)),
        p_minus_yprev=float(np.linalg.norm(p_d - yp_d)),
        dist_to_ref=_ref_distance(prob, x, y_d),
        active_count=len(active),
    )


def inner_tolerance(prev_step: float | None) -> float:
    # tighter than the outer progress; floored so inner loops can terminate
    if prev_step is None:
        return 1e-10
    return max(min(1e-10, 0.01 * prev_step), 1e-13)


class StepsizeCache:
    """Memoize stepsizes by active set; the norm estimate is the costly part."""

    def __init__(self, policy: StepsizePolicy, sys, override: float | None = None):
        self.policy, self.sys, self.override = policy, sys, override
        self._cache = {}

    def __call__(self, I: IndexSet) -> float:
        if self.override is not None:
            return self.override
        if I not in self._cache:
            self._cache[I] = stepsize(self.policy, self.sys, I)
        return self._cache[I]


def run(prob: ProblemInstance, schedule, policy: StepsizePolicy,
        stop: StoppingRule | None = StoppingRule(), budget: int = 10_000, *,
        x0=None, y0: DualVector | None = None, record_iterates: bool = False,
        lam_override: float | None = None, lambdas: Sequence[float] | None = None) -> RunResult:
    """Iterate :func:`pdm_step` until `stop` fires or `budget` runs out.

    Parameters
    ----------
    prob : ProblemInstance
    schedule
        Any object with ``active(k)``; see :mod:`pdmcc.topology`.
    policy : StepsizePolicy
    stop : StoppingRule or None
        ``None`` runs the full budget.
    budget : int
        Maximum number of iterations, at least 1.
    x0, y0
        Starting point; zeros by default.  `x0` is projected onto ``X``.
    record_iterates : bool
        Keep every ``(x^k, y^k)`` in ``RunResult.iterates``.
    lam_override : float, optional
        Use this stepsize regardless of the policy (for negative tests).
    lambdas : sequence of float, optional
        Replay an explicit stepsize sequence (``lambdas[k-1]`` at step k).

    Returns
    -------
    RunResult
        ``stop_reason`` is ``"converged"`` or ``"budget"``.
    """
    if budget < 1:
        raise ValueError(f"budget must be at least 1, got {budget}")
    state = initial_state(prob, x0, y0)
    lam_of = StepsizeCache(policy, prob.constraints, lam_override)
    result = RunResult(state, [], "budget",
                       _ref_distance(prob, state.x, state.y.dense()))
    if record_iterates:
        result.iterates.append((state.x.copy(), state.y.dense()))
    prev_step = None
    for k in range(1, budget + 1):
        I = schedule_next(schedule, k)
        lam = lambdas[k - 1] if lambdas is not None else lam_of(I)
        new = pdm_step(prob, state, I, lam, inner_tolerance(prev_step))
        rec = make_record(prob, k, lam, new.x, state.x, new.y, state.y, new.p_last, I)
        result.trace.append(rec)
        result.lambdas.append(lam)
        if record_iterates:
            result.iterates.append((new.x.copy(), new.y.dense()))
        prev_step = rec.step_norm
        state = new
        if stop is not None and stop.satisfied(rec):
            result.stop_reason = "converged"
            break
    result.state = state
    return result


@dataclass(frozen=True)
class FejerReport:
    passed: bool
    steps_checked: int
    first_violation: int | None
    max_excess: float

    def __str__(self):
        if self.passed:
            return f"Fejer check passed over {self.steps_checked} steps (max excess {self.max_excess:.3e})"
        return (f"Fejer check FAILED at k={self.first_violation} "
                f"(max excess {self.max_excess:.3e} over {self.steps_checked} steps)")


def check_fejer(result: RunResult, tau: float, slack: float = 1e-9, warmup: int = 0) -> FejerReport:
    """Check the per-step distance decrease towards the reference point.

    For every step ``k > warmup``::

        d_k^2 <= d_{k-1}^2 - ||p^k - y^k||^2 - ||p^k - y^{k-1}||^2
                 - tau ||x^k - x^{k-1}||^2 + slack

    where ``d_k`` is the distance of ``(x^k, y^k)`` to the reference saddle
    point.  The reference must be a saddle point for every visited active
    set; the caller is responsible for that.
    """
    if math.isnan(result.initial_dist_to_ref):
        raise ValueError("Fejer check needs a reference saddle point (x*, y*) on the problem")
    prev = result.initial_dist_to_ref
    first, worst = None, -math.inf
    checked = 0
    for rec in result.trace:
        if rec.k > warmup:
            bound = (prev ** 2 - rec.p_minus_y ** 2 - rec.p_minus_yprev ** 2
                     - tau * rec.step_norm ** 2)
            excess = rec.dist_to_ref ** 2 - bound
            if not math.isfinite(excess):
                excess = math.inf  # diverged
            worst = max(worst, excess)
            checked += 1
            if excess > slack and first is None:
                first = rec.k
        prev = rec.dist_to_ref
    return FejerReport(first is None, checked, first, worst if checked else 0.0)
