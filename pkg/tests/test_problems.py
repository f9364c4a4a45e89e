import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from pdmcc import (
    ArcConstraintSystem,
    Box,
    CommGraph,
    DualVector,
    HalfspacePenalty,
    IndexSet,
    ProblemInstance,
    ProxNotConverged,
    Quadratic,
    SmoothFunction,
    WholeSpace,
    lagrangian,
    make_builtin,
    objective_value,
    prox_primal,
    saddle_residual,
)
from pdmcc.problems import prox_inequality_gap, unconstrained_minimum


def two_agent(centers=(0.0, 2.0)):
    g = CommGraph.complete(2)
    return make_builtin("quadratic_consensus", g, n=1, centers=[[c] for c in centers])


def single_block(f, X=None, n=1):
    sys = ArcConstraintSystem.consensus(1, n, [])
    return ProblemInstance(1, n, [f], [X or WholeSpace()], sys)


# --- objective ---------------------------------------------------------------


def test_objective_examples():
    assert objective_value(two_agent(), [[0.0], [2.0]]) == 0.0
    pen = single_block(HalfspacePenalty([1.0], 1.0, p=2))
    assert objective_value(pen, [[3.0]]) == pytest.approx(2.0)
    assert objective_value(pen, [[0.5]]) == 0.0
    assert single_block(HalfspacePenalty([1.0], 1.0, p=1)).blocks[0].value(np.array([3.0])) == 2.0


# --- prox ---------------------------------------------------------------------


def test_prox_examples():
    q = single_block(Quadratic(1.0, [0.0]))
    assert prox_primal(q, [[0.0]], [[2.0]], 1.0)[0, 0] == pytest.approx(1.0)
    zero = single_block(Quadratic(0.0, [5.0, 5.0]), n=2)
    assert np.array_equal(prox_primal(zero, np.zeros((1, 2)), [[1.5, -2.0]], 0.7), [[1.5, -2.0]])
    boxed = single_block(Quadratic(1.0, [2.0]), Box([0.0], [1.0]))
    assert prox_primal(boxed, [[0.0]], [[2.0]], 1.0)[0, 0] == 1.0


def test_prox_rejects_nonpositive_stepsize():
    with pytest.raises(ValueError):
        prox_primal(two_agent(), np.zeros((2, 1)), np.zeros((2, 1)), 0.0)


def _numeric_prox(f, linear, u, lam):
    obj = lambda v: f.value(v) + linear @ v + np.sum((v - u) ** 2) / (2 * lam)
    return minimize(obj, u, method="Nelder-Mead",
                    options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 20000}).x


@pytest.mark.parametrize("p", [1, 2])
@pytest.mark.parametrize("seed", range(8))
def test_penalty_prox_matches_numerical_minimizer(p, seed):
    rng = np.random.default_rng(seed)
    f = HalfspacePenalty(rng.standard_normal(2), rng.standard_normal(), p)
    u, lin, lam = rng.standard_normal(2) * 2, rng.standard_normal(2), float(rng.uniform(0.1, 3))
    got = f.prox(lin, u, lam, WholeSpace(), 1e-12)
    want = _numeric_prox(f, lin, u, lam)
    obj = lambda v: f.value(v) + lin @ v + np.sum((v - u) ** 2) / (2 * lam)
    assert obj(got) <= obj(want) + 1e-10
    assert np.allclose(got, want, atol=1e-5)


def test_penalty_prox_requires_whole_space():
    with pytest.raises(NotImplementedError):
        HalfspacePenalty([1.0], 0.0).prox(np.zeros(1), np.zeros(1), 1.0, Box([0.0], [1.0]), 1e-10)


def test_smooth_prox_matches_quadratic_closed_form():
    a, c = np.array([2.0, 0.5]), np.array([1.0, -1.0])
    smooth = SmoothFunction(lambda v: 0.5 * np.sum(a * (v - c) ** 2), lambda v: a * (v - c), 2.0)
    box = Box([-0.5, -0.5], [0.5, 0.5])
    lin, u = np.array([0.3, -0.2]), np.array([0.8, 0.1])
    got = smooth.prox(lin, u, 0.7, box, 1e-12)
    assert np.allclose(got, Quadratic(a, c).prox(lin, u, 0.7, box, 0.0), atol=1e-10)


def test_smooth_prox_reports_nonconvergence():
    # softplus: the inner loop is not exact after one step
    smooth = SmoothFunction(lambda v: float(np.sum(np.logaddexp(0, v))),
                            expit, 0.25)
    smooth.max_inner = 3
    prob = single_block(smooth)
    with pytest.raises(ProxNotConverged) as info:
        prox_primal(prob, [[0.0]], [[10.0]], 100.0, tol=1e-14)
    assert info.value.block == 0 and info.value.residual > 0
    assert info.value.best.shape == (1,)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 3))
def test_prox_three_point_inequality(seed, n):
    rng = np.random.default_rng(seed)
    m = 3
    g = CommGraph.complete(m)
    lo = -rng.uniform(0.1, 2, (m, n))
    prob = make_builtin("quadratic_consensus", g, n=n, seed=seed,
                        weights=rng.uniform(0.1, 3, m), lower=lo, upper=lo + rng.uniform(0.1, 3, (m, n)))
    u, lin = 3 * rng.standard_normal((m, n)), rng.standard_normal((m, n))
    lam = float(10 ** rng.uniform(-2, 1))
    zs = [prob.project(3 * rng.standard_normal((m, n))) for _ in range(5)]
    assert prox_inequality_gap(prob, lin, u, lam, zs) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_prox_output_is_minimizer(seed):
    rng = np.random.default_rng(seed)
    g = CommGraph.complete(3)
    prob = make_builtin("penalized_feasibility", g, n=2, seed=seed, p=int(rng.integers(1, 3)))
    u, lin, lam = rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), float(rng.uniform(0.05, 5))
    v = prox_primal(prob, lin, u, lam)
    mu = lambda z: objective_value(prob, z) + np.sum(lin * z) + np.sum((z - u) ** 2) / (2 * lam)
    for _ in range(20):
        z = v + rng.standard_normal((3, 2)) * rng.uniform(1e-4, 1)
        assert mu(v) <= mu(z) + 1e-10


# --- lagrangian / saddle residual -------------------------------------------


def test_lagrangian_examples():
    prob = two_agent()
    x = np.array([[0.3], [1.7]])
    assert lagrangian(prob, x, DualVector.zeros(1, 1)) == objective_value(prob, x)
    y = DualVector.from_dense([[-1.0]], IndexSet.full(1))
    assert lagrangian(prob, [[1.0], [1.0]], y) == pytest.approx(1.0)
    assert lagrangian(prob, [[0.4], [0.4]], y) == pytest.approx(objective_value(prob, [[0.4], [0.4]]))


def test_saddle_residual_examples():
    prob = two_agent()
    I = IndexSet.full(1)
    feas, stat = saddle_residual(prob, I, [[1.0], [1.0]], DualVector.from_dense([[-1.0]], I))
    assert feas <= 1e-10 and stat <= 1e-10
    feas, _ = saddle_residual(prob, I, [[0.0], [2.0]], DualVector.zeros(1, 1))
    assert feas == pytest.approx(2.0)
    x_free, _ = unconstrained_minimum(prob)
    assert saddle_residual(prob, IndexSet.empty(1), x_free, DualVector.zeros(1, 1)) == (0.0, 0.0)
    with pytest.raises(ValueError):
        saddle_residual(prob, IndexSet.empty(1), x_free, DualVector.from_dense([[1.0]], I))


# --- builtins -----------------------------------------------------------------


def test_builtin_quadratic_reference():
    assert np.allclose(two_agent().reference.x, [[1.0], [1.0]])
    prob = make_builtin("quadratic_consensus", CommGraph.path(3), centers=[[0.0], [3.0], [6.0]])
    assert np.allclose(prob.reference.x, 3.0)


@pytest.mark.parametrize("graph", [CommGraph.complete(5), CommGraph.ring(6), CommGraph.star(4),
                                   CommGraph.from_edges(5, [(0, 1), (2, 3), (3, 4)])])
def test_builtin_quadratic_reference_is_saddle_point(graph):
    rng = np.random.default_rng(graph.m)
    prob = make_builtin("quadratic_consensus", graph, n=2, seed=4, weights=rng.uniform(0.5, 2, graph.m))
    ref = prob.reference
    feas, stat = saddle_residual(prob, graph.full_set(), ref.x, ref.y)
    assert feas <= 1e-10 and stat <= 1e-8


def test_builtin_quadratic_reference_matches_kkt_solve():
    # independent oracle: solve the KKT system of the equality-constrained QP
    g = CommGraph.ring(5)
    prob = make_builtin("quadratic_consensus", g, n=1, seed=2, weights=[1, 2, 3, 4, 5])
    a = np.array([1, 2, 3, 4, 5.0])
    c = np.array([f.c[0] for f in prob.blocks])
    A = prob.constraints.dense(g.full_set())
    K = np.block([[np.diag(a), A.T], [A, np.zeros((g.l, g.l))]])
    sol = np.linalg.lstsq(K, np.concatenate([a * c, np.zeros(g.l)]), rcond=None)[0]
    assert np.allclose(prob.reference.x.ravel(), sol[:5], atol=1e-12)


def test_builtin_penalized_feasibility_reference():
    g = CommGraph.complete(4)
    point = np.array([0.5, -1.0])
    G = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]])
    prob = make_builtin("penalized_feasibility", g, n=2, g=G, h=G @ point + 0.1, feasible_point=point)
    assert objective_value(prob, prob.reference.x) == 0.0
    assert np.allclose(prob.reference.x, point)
    # optimal value over X alone equals the consensus optimum when the sets intersect
    _, fss = unconstrained_minimum(prob)
    assert objective_value(prob, prob.reference.x) == pytest.approx(fss, abs=1e-8)
    for I in (IndexSet.empty(g.l), g.full_set(), g.index_set([0, 3])):
        feas, stat = saddle_residual(prob, I, prob.reference.x, DualVector.zeros(g.l, 2))
        assert feas == 0.0 and stat <= 1e-12


def test_builtin_penalized_rejects_infeasible_point():
    with pytest.raises(ValueError):
        make_builtin("penalized_feasibility", CommGraph.complete(2), n=1, g=[[1.0], [1.0]], h=[0.0, 0.0],
                     feasible_point=[1.0])


def test_builtin_constrained_least_squares_reference():
    g = CommGraph.ring(4)
    prob = make_builtin("constrained_least_squares", g, n=2, seed=1)
    assert prob.reference.y is None
    x = prob.reference.x
    assert all(X.contains(x[i], 1e-12) for i, X in enumerate(prob.feasible))
    # compare with a bound-constrained numerical solve of the consensus problem
    a = np.stack([f.a for f in prob.blocks])
    c = np.stack([f.c for f in prob.blocks])
    lo = np.max([X.lower for X in prob.feasible], axis=0)
    hi = np.min([X.upper for X in prob.feasible], axis=0)
    res = minimize(lambda v: 0.5 * np.sum(a * (v - c) ** 2), np.zeros(2),
                   jac=lambda v: np.sum(a * (v - c), axis=0), bounds=list(zip(lo, hi)),
                   method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
    assert np.allclose(x[0], res.x, atol=1e-6)


@pytest.mark.parametrize("params", [{"weights": [1.0, -1.0]}, {"centers": [[0.0]]}])
def test_builtin_invalid_params(params):
    with pytest.raises(ValueError):
        make_builtin("quadratic_consensus", CommGraph.complete(2), **params)


def test_builtin_unknown_kind():
    with pytest.raises(ValueError):
        make_builtin("lasso", CommGraph.complete(2))


def test_problem_dimension_check():
    with pytest.raises(ValueError):
        ProblemInstance(2, 1, [Quadratic(1, [0.0])], [WholeSpace()], ArcConstraintSystem.consensus(2, 1, []))
