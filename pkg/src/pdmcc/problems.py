"""Separable objectives, feasible sets and the primal proximal subproblem.

A :class:`ProblemInstance` minimizes ``f(x) = sum_i f_i(x_i)`` over
``X = X_1 x ... x X_m`` subject to ``A x = b``.  Every block function knows
how to solve its own proximal subproblem

    argmin_{v in X_i}  f_i(v) + <linear, v> + ||v - u||^2 / (2 lam)

which is all the primal-dual iteration needs.  Agents in the distributed
simulation call exactly the same per-block routine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .blocks import (
    ArcConstraintSystem,
    DimensionError,
    DualVector,
    IndexSet,
    apply_A,
    apply_A_transpose,
    as_block_vector,
)
from .topology import CommGraph, spanning_tree

__all__ = [
    "ProxNotConverged",
    "WholeSpace",
    "Box",
    "Quadratic",
    "HalfspacePenalty",
    "SmoothFunction",
    "ReferenceSolution",
    "ProblemInstance",
    "objective_value",
    "prox_primal",
    "lagrangian",
    "saddle_residual",
    "prox_inequality_gap",
    "unconstrained_minimum",
    "make_builtin",
    "BUILTIN_KINDS",
]


class ProxNotConverged(RuntimeError):
    """The inner projected-gradient loop hit its iteration cap.

    Attributes
    ----------
    best : ndarray
        Iterate with the smallest gradient-mapping norm seen.
    residual : float
        That norm.
    block : int or None
        Block index, when raised from a per-block solve.
    """

    def __init__(self, message, best, residual, block=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.block = block


# ---------------------------------------------------------------------------
# feasible sets


class WholeSpace:
    """``X_i = R^n``."""

    def project(self, v):
        return np.asarray(v, dtype=np.float64)

    def contains(self, v, tol=0.0):
        return True

    def __repr__(self):
        return "WholeSpace()"


class Box:
    """Axis-aligned box ``lower <= v <= upper`` (bounds may be infinite)."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape:
            raise DimensionError("box bounds must have the same shape")
        if np.any(self.lower > self.upper):
            raise ValueError("malformed box: some lower bound exceeds its upper bound")

    def project(self, v):
        return np.clip(v, self.lower, self.upper)

    def contains(self, v, tol=0.0):
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


# ---------------------------------------------------------------------------
# block functions


class Quadratic:
    """``0.5 * sum_j a_j (v_j - c_j)^2`` with ``a >= 0``.

    `a` may be a scalar or a per-coordinate weight vector.  The prox is
    solved coordinatewise in closed form and clipped onto a box, which is
    exact because the problem separates across coordinates.
    """

    def __init__(self, a, c):
        self.c = np.asarray(c, dtype=np.float64)
        self.a = np.broadcast_to(np.asarray(a, dtype=np.float64), self.c.shape).copy()
        if np.any(self.a < 0):
            raise ValueError("quadratic weights must be nonnegative (convexity)")

    def value(self, v):
        d = v - self.c
        return 0.5 * float(np.sum(self.a * d * d))

    def gradient(self, v):
        return self.a * (v - self.c)

    def prox(self, linear, u, lam, feasible, tol):
        v = (self.a * self.c - linear + u / lam) / (self.a + 1.0 / lam)
        return feasible.project(v)

    def minimize(self, feasible, start=None):
        return feasible.project(self.c.copy())


class HalfspacePenalty:
    """``(1/p) * max(<g, v> - h, 0)^p`` for ``p`` in ``{1, 2}``.

    Vanishes exactly on the halfspace ``<g, v> <= h``.
    """

    def __init__(self, g, h, p=2):
        if p not in (1, 2):
            raise ValueError(f"penalty exponent must be 1 or 2, got {p}")
        self.g = np.asarray(g, dtype=np.float64)
        self.h = float(h)
        self.p = int(p)

    def value(self, v):
        r = max(float(self.g @ v) - self.h, 0.0)
        return r if self.p == 1 else 0.5 * r * r

    def prox(self, linear, u, lam, feasible, tol):
        if not isinstance(feasible, WholeSpace):
            raise NotImplementedError("penalty blocks have a closed-form prox only on the whole space")
        w = u - lam * linear
        gg = float(self.g @ self.g)
        r = float(self.g @ w) - self.h
        if r <= 0.0 or gg == 0.0:
            return w
        if self.p == 2:
            return w - (lam * r / (1.0 + lam * gg)) * self.g
        if r >= lam * gg:
            return w - lam * self.g
        return w - (r / gg) * self.g

    def minimize(self, feasible, start=None):
        # any point of the halfspace; the projection of the origin is canonical
        gg = float(self.g @ self.g)
        if gg == 0.0 or self.h >= 0.0:
            return np.zeros_like(self.g)
        return (self.h / gg) * self.g


class SmoothFunction:
    """Caller-supplied convex function with an L-Lipschitz gradient.

    The prox is computed by projected gradient with step ``1/(L + 1/lam)``
    until the gradient mapping drops below `tol`.
    """

    max_inner = 10_000

    def __init__(self, value: Callable, gradient: Callable, lipschitz: float):
        if lipschitz < 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        self._value = value
        self._gradient = gradient
        self.lipschitz = float(lipschitz)

    def value(self, v):
        return float(self._value(v))

    def gradient(self, v):
        return np.asarray(self._gradient(v), dtype=np.float64)

    def prox(self, linear, u, lam, feasible, tol):
        step = 1.0 / (self.lipschitz + 1.0 / lam)
        v = feasible.project(np.array(u, dtype=np.float64))
        best, best_res = v, np.inf
        for _ in range(self.max_inner):
            grad = self.gradient(v) + linear + (v - u) / lam
            v_new = feasible.project(v - step * grad)
            res = float(np.linalg.norm(v - v_new)) / step
            if res < best_res:
                best, best_res = v_new, res
            v = v_new
            if res <= tol:
                return v
        raise ProxNotConverged(
            f"projected gradient did not reach tol={tol:g} in {self.max_inner} iterations "
            f"(residual {best_res:.3e})",
            best, best_res,
        )

    def minimize(self, feasible, start, tol=1e-10):
        if self.lipschitz == 0.0:
            return feasible.project(np.array(start, dtype=np.float64))
        step = 1.0 / self.lipschitz
        v = feasible.project(np.array(start, dtype=np.float64))
        for _ in range(self.max_inner):
            v_new = feasible.project(v - step * self.gradient(v))
            if np.linalg.norm(v - v_new) / step <= tol:
                return v_new
            v = v_new
        raise ProxNotConverged("projected gradient on f did not converge", v, float("nan"))


# ---------------------------------------------------------------------------
# problem instance


@dataclass(frozen=True)
class ReferenceSolution:
    """A known saddle point ``(x*, y*)``.

    The pair is a saddle point for every index set containing the support
    of `y` (with `x` feasible for all arcs), which is how the built-in
    instances construct it.  `y` may be ``None`` when only the primal
    solution is known.
    """

    x: np.ndarray
    y: DualVector | None = None


@dataclass
class ProblemInstance:
    m: int
    n: int
    blocks: tuple
    feasible: tuple
    constraints: ArcConstraintSystem
    reference: ReferenceSolution | None = None
    graph: CommGraph | None = None
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.blocks = tuple(self.blocks)
        self.feasible = tuple(self.feasible)
        if len(self.blocks) != self.m or len(self.feasible) != self.m:
            raise DimensionError(
                f"need one block function and one feasible set per block (m={self.m}), "
                f"got {len(self.blocks)} and {len(self.feasible)}"
            )
        if (self.constraints.m, self.constraints.n) != (self.m, self.n):
            raise DimensionError(
                f"constraint system is (m={self.constraints.m}, n={self.constraints.n}), "
                f"problem is (m={self.m}, n={self.n})"
            )

    def project(self, x):
        x = as_block_vector(x, self.m, self.n)
        return np.stack([X.project(x[i]) for i, X in enumerate(self.feasible)])


def objective_value(prob: ProblemInstance, x) -> float:
    x = as_block_vector(x, prob.m, prob.n)
    total = 0.0
    for i, f in enumerate(prob.blocks):
        total += f.value(x[i])
    return total


def prox_primal(prob: ProblemInstance, linear, u, lam: float, tol: float = 1e-10) -> np.ndarray:
    """Minimize ``f(x) + <linear, x> + ||x - u||^2 / (2 lam)`` over ``X``.

    Parameters
    ----------
    prob : ProblemInstance
    linear : array_like, shape (m, n)
        Linear term, typically ``A^T p``.
    u : array_like, shape (m, n)
        Proximal center.
    lam : float
        Stepsize, must be positive.
    tol : float
        Inner tolerance; only used by blocks without a closed form.

    Returns
    -------
    ndarray, shape (m, n)
    """
    if not lam > 0:
        raise ValueError(f"proximal stepsize must be positive, got {lam}")
    linear = as_block_vector(linear, prob.m, prob.n, "linear")
    u = as_block_vector(u, prob.m, prob.n, "u")
    out = np.empty((prob.m, prob.n))
    for i, (f, X) in enumerate(zip(prob.blocks, prob.feasible)):
        try:
            out[i] = f.prox(linear[i], u[i], lam, X, tol)
        except ProxNotConverged as exc:
            exc.block = i
            raise
    return out


def lagrangian(prob: ProblemInstance, x, y: DualVector) -> float:
    """``f(x) + <y, A x - b>``; inactive dual blocks contribute nothing."""
    x = as_block_vector(x, prob.m, prob.n)
    sys = prob.constraints
    if y.l != sys.l:
        raise DimensionError(f"dual has l={y.l} blocks, system has l={sys.l}")
    resid = apply_A(sys, y.active, x)[y.active.as_array()] - sys.b_of(y.active)
    return objective_value(prob, x) + float(np.sum(y.values * resid))


def saddle_residual(prob: ProblemInstance, I: IndexSet, x, y: DualVector,
                    tol: float = 1e-10) -> tuple[float, float]:
    """Primal infeasibility and stationarity residual of ``(x, y)`` for ``I``.

    Returns ``(||A_I x - b_I||, ||x - prox_primal(A^T y, x, 1)||)``.  Both
    vanish exactly at saddle points of the problem restricted to ``I``.
    """
    sys = prob.constraints
    if not y.active.issubset(I):
        raise ValueError("dual variable must be supported in I")
    x = as_block_vector(x, prob.m, prob.n)
    feas = apply_A(sys, I, x)[I.as_array()] - sys.b_of(I)
    lin = apply_A_transpose(sys, I, y)
    stat = x - prox_primal(prob, lin, x, 1.0, tol)
    return float(np.linalg.norm(feas)), float(np.linalg.norm(stat))


def prox_inequality_gap(prob: ProblemInstance, linear, u, lam: float, zs,
                        tol: float = 1e-10) -> float:
    """Largest violation of the three-point prox inequality over samples `zs`.

    With ``phi(z) = f(z) + <linear, z>`` and ``v`` the prox output, every
    feasible ``z`` must satisfy

        2 lam (phi(v) - phi(z)) <= ||z - u||^2 - ||z - v||^2 - ||v - u||^2.

    Returns ``max(lhs - rhs)`` (nonpositive up to rounding when it holds).
    """
    v = prox_primal(prob, linear, u, lam, tol)
    u = as_block_vector(u, prob.m, prob.n, "u")
    linear = as_block_vector(linear, prob.m, prob.n, "linear")

    def phi(z):
        return objective_value(prob, z) + float(np.sum(linear * z))

    phi_v = phi(v)
    worst = -np.inf
    for z in zs:
        z = as_block_vector(z, prob.m, prob.n, "z")
        lhs = 2.0 * lam * (phi_v - phi(z))
        rhs = np.sum((z - u) ** 2) - np.sum((z - v) ** 2) - np.sum((v - u) ** 2)
        worst = max(worst, lhs - rhs)
    return float(worst)


def unconstrained_minimum(prob: ProblemInstance) -> tuple[np.ndarray, float]:
    """A minimizer of ``f`` over ``X`` alone and the optimal value ``f**``."""
    start = np.zeros(prob.n)
    x = np.stack([f.minimize(X, start) for f, X in zip(prob.blocks, prob.feasible)])
    return x, objective_value(prob, x)


# ---------------------------------------------------------------------------
# built-in instances

BUILTIN_KINDS = ("quadratic_consensus", "penalized_feasibility", "constrained_least_squares")


def _component_labels(graph: CommGraph) -> np.ndarray:
    from .topology import _labels
    return _labels(graph, graph.full_set())


def _tree_duals(graph: CommGraph, n: int, grad: np.ndarray) -> DualVector:
    # solve sum_{i in T} A_i^T y_i = -grad on a spanning forest; exact for trees
    tree = spanning_tree(graph)
    sys = graph.constraint_system(n)
    l = graph.l
    if not len(tree):
        return DualVector.zeros(l, n)
    At = sys.dense(tree).T
    sol, *_ = np.linalg.lstsq(At, -grad.reshape(-1), rcond=None)
    return DualVector(tree, sol.reshape(len(tree), n))


def _random_centers(rng, m, n, scale=3.0):
    return scale * rng.standard_normal((m, n))


def make_builtin(kind: str, graph: CommGraph, n: int = 1, seed: int = 0, **params) -> ProblemInstance:
    """Construct one of the built-in problem families on `graph`.

    ``quadratic_consensus``
        ``f_i(v) = 0.5 a_i ||v - c_i||^2``.  Params: ``centers`` (m, n),
        ``weights`` (m,) positive, optional ``lower``/``upper`` box bounds.
        Without boxes the reference saddle point is filled in: the weighted
        mean on every connected component, with duals on a spanning forest.
    ``penalized_feasibility``
        ``f_i(v) = (1/p) max(<g_i, v> - h_i, 0)^p``.  Params: ``g`` (m, n),
        ``h`` (m,), ``p``, ``feasible_point``.  When ``g``/``h`` are omitted a
        random instance is drawn with a common feasible point, which together
        with zero duals is a saddle point for every index set.
    ``constrained_least_squares``
        Diagonal weighted least squares per block with boxes sharing a
        common point.  Params: ``weights``, ``centers``, ``lower``,
        ``upper``.  The reference primal is the coordinatewise clipped
        weighted mean (graph must be connected); no reference dual.

    Centers and random data not supplied are drawn from `seed`.
    """
    if kind not in BUILTIN_KINDS:
        raise ValueError(f"unknown builtin kind {kind!r}; expected one of {BUILTIN_KINDS}")
    m = graph.m
    rng = np.random.default_rng(seed)
    sys = graph.constraint_system(n)
    record = dict(params, seed=seed)

    if kind == "quadratic_consensus":
        c = params.get("centers")
        c = _random_centers(rng, m, n) if c is None else as_block_vector(c, m, n, "centers")
        a = np.asarray(params.get("weights", np.ones(m)), dtype=np.float64).reshape(-1)
        if a.shape != (m,):
            raise DimensionError(f"weights must have one entry per block (m={m})")
        if np.any(a <= 0):
            raise ValueError("quadratic_consensus weights must be positive")
        feasible = _boxes(params, m, n)
        blocks = [Quadratic(a[i], c[i]) for i in range(m)]
        reference = None
        if all(isinstance(X, WholeSpace) for X in feasible):
            labels = _component_labels(graph)
            xs = np.empty((m, n))
            for lab in set(labels.tolist()):
                idx = labels == lab
                xs[idx] = (a[idx, None] * c[idx]).sum(axis=0) / a[idx].sum()
            grad = a[:, None] * (xs - c)
            reference = ReferenceSolution(xs, _tree_duals(graph, n, grad))
        return ProblemInstance(m, n, blocks, feasible, sys, reference, graph, kind, record)

    if kind == "penalized_feasibility":
        p = int(params.get("p", 2))
        g = params.get("g")
        h = params.get("h")
        point = params.get("feasible_point")
        if g is None or h is None:
            g = rng.standard_normal((m, n))
            point = rng.standard_normal(n) if point is None else np.asarray(point, dtype=np.float64)
            h = g @ point + rng.uniform(0.0, 1.0, m)
        g = as_block_vector(g, m, n, "g")
        h = np.asarray(h, dtype=np.float64).reshape(-1)
        if h.shape != (m,):
            raise DimensionError(f"h must have one entry per block (m={m})")
        blocks = [HalfspacePenalty(g[i], h[i], p) for i in range(m)]
        feasible = [WholeSpace() for _ in range(m)]
        reference = None
        if point is not None:
            point = np.asarray(point, dtype=np.float64).reshape(n)
            if np.any(g @ point - h > 1e-12):
                raise ValueError("feasible_point violates some halfspace")
            reference = ReferenceSolution(np.tile(point, (m, 1)), DualVector.zeros(graph.l, n))
        return ProblemInstance(m, n, blocks, feasible, sys, reference, graph, kind, record)

    # constrained_least_squares
    a = params.get("weights")
    a = rng.uniform(0.5, 2.0, (m, n)) if a is None else as_block_vector(a, m, n, "weights")
    if np.any(a <= 0):
        raise ValueError("least-squares weights must be positive")
    c = params.get("centers")
    c = _random_centers(rng, m, n) if c is None else as_block_vector(c, m, n, "centers")
    if params.get("lower") is None and params.get("upper") is None:
        params = dict(params, lower=-1.0 - rng.uniform(0, 1, (m, n)),
                      upper=1.0 + rng.uniform(0, 1, (m, n)))
    feasible = _boxes(params, m, n)
    lo = np.stack([X.lower * np.ones(n) if isinstance(X, Box) else np.full(n, -np.inf) for X in feasible])
    hi = np.stack([X.upper * np.ones(n) if isinstance(X, Box) else np.full(n, np.inf) for X in feasible])
    blocks = [Quadratic(a[i], c[i]) for i in range(m)]
    reference = None
    common_lo, common_hi = lo.max(axis=0), hi.min(axis=0)
    if np.any(common_lo > common_hi):
        raise ValueError("boxes have empty intersection; the consensus problem is infeasible")
    labels = _component_labels(graph)
    if len(set(labels.tolist())) == 1:
        mean = (a * c).sum(axis=0) / a.sum(axis=0)
        reference = ReferenceSolution(np.tile(np.clip(mean, common_lo, common_hi), (m, 1)), None)
    return ProblemInstance(m, n, blocks, feasible, sys, reference, graph, kind, record)


def _boxes(params, m, n):
    lower, upper = params.get("lower"), params.get("upper")
    if lower is None and upper is None:
        return [WholeSpace() for _ in range(m)]
    lower = np.broadcast_to(np.asarray(-np.inf if lower is None else lower, dtype=np.float64), (m, n))
    upper = np.broadcast_to(np.asarray(np.inf if upper is None else upper, dtype=np.float64), (m, n))
    return [Box(lower[i], upper[i]) for i in range(m)]
