"""Block vectors, arc-indexed constraint systems and dual vectors.

Primal points are plain ``float64`` arrays of shape ``(m, n)``: row ``i`` is
the block ``x_i``.  Arcs, agents and blocks are indexed from zero.

An :class:`ArcConstraintSystem` holds one ``n x (m*n)`` row block ``A_i`` per
arc ``i``.  Rows are stored either as a consensus pair ``(s, t)`` meaning
``A_i x = x_s - x_t``, or as an explicit dense matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix

__all__ = [
    "DimensionError",
    "IndexSet",
    "DualVector",
    "ArcConstraintSystem",
    "as_block_vector",
    "apply_A",
    "apply_A_transpose",
    "project_Y",
    "operator_norm",
    "is_basic_index_set",
]


class DimensionError(ValueError):
    """Raised when array shapes disagree; the message names the axis."""


def as_block_vector(x, m: int, n: int, name: str = "x") -> np.ndarray:
    """Return `x` as a ``(m, n)`` float64 array, checking its shape.

    A flat vector of length ``m*n`` is accepted and read in block-major
    order.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        if arr.size != m * n:
            raise DimensionError(
                f"{name}: expected {m * n} coordinates (m={m}, n={n}), got {arr.size}"
            )
        return arr.reshape(m, n)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-d block array, got ndim={arr.ndim}")
    if arr.shape[0] != m:
        raise DimensionError(f"{name}: block count (axis 0) is {arr.shape[0]}, expected m={m}")
    if arr.shape[1] != n:
        raise DimensionError(f"{name}: block dimension (axis 1) is {arr.shape[1]}, expected n={n}")
    return arr


@dataclass(frozen=True)
class IndexSet:
    """A sorted, duplicate-free subset of ``range(universe_size)``."""

    universe_size: int
    members: tuple = ()

    def __post_init__(self):
        members = tuple(int(i) for i in self.members)
        if any(b <= a for a, b in zip(members, members[1:])):
            raise ValueError("IndexSet members must be strictly increasing")
        if members and (members[0] < 0 or members[-1] >= self.universe_size):
            raise ValueError(
                f"IndexSet members must lie in [0, {self.universe_size}), got {members}"
            )
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "_set", frozenset(members))

    @classmethod
    def of(cls, universe_size: int, members: Iterable[int] = ()) -> "IndexSet":
        return cls(universe_size, tuple(sorted(set(int(i) for i in members))))

    @classmethod
    def full(cls, universe_size: int) -> "IndexSet":
        return cls(universe_size, tuple(range(universe_size)))

    @classmethod
    def empty(cls, universe_size: int) -> "IndexSet":
        return cls(universe_size, ())

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    def __contains__(self, i):
        return i in self._set

    def _check(self, other: "IndexSet"):
        if other.universe_size != self.universe_size:
            raise DimensionError(
                f"index sets over different universes: {self.universe_size} vs {other.universe_size}"
            )

    def issubset(self, other: "IndexSet") -> bool:
        self._check(other)
        return self._set <= other._set

    def union(self, other: "IndexSet") -> "IndexSet":
        self._check(other)
        return IndexSet.of(self.universe_size, set(self.members) | set(other.members))

    def intersection(self, other: "IndexSet") -> "IndexSet":
        self._check(other)
        return IndexSet.of(self.universe_size, set(self.members) & set(other.members))

    def difference(self, other: "IndexSet") -> "IndexSet":
        self._check(other)
        return IndexSet.of(self.universe_size, set(self.members) - set(other.members))

    def mask(self) -> np.ndarray:
        out = np.zeros(self.universe_size, dtype=bool)
        out[list(self.members)] = True
        return out

    def as_array(self) -> np.ndarray:
        return np.asarray(self.members, dtype=np.intp)


@dataclass(frozen=True)
class DualVector:
    """Arc-indexed dual variable with implicit zeros outside `active`.

    `values` has one row per member of `active`, in the same order.
    """

    active: IndexSet
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != len(self.active):
            raise DimensionError(
                f"DualVector values must have shape ({len(self.active)}, n), got {vals.shape}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def l(self) -> int:
        return self.active.universe_size

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, l: int, n: int, active: IndexSet | None = None) -> "DualVector":
        active = IndexSet.empty(l) if active is None else active
        return cls(active, np.zeros((len(active), n)))

    @classmethod
    def from_dense(cls, dense, active: IndexSet | None = None) -> "DualVector":
        """Build from an ``(l, n)`` array, keeping only the rows in `active`."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise DimensionError("dense dual must have shape (l, n)")
        active = IndexSet.full(dense.shape[0]) if active is None else active
        if active.universe_size != dense.shape[0]:
            raise DimensionError(
                f"dense dual has {dense.shape[0]} arc blocks, index set universe is {active.universe_size}"
            )
        return cls(active, dense[active.as_array()])

    def dense(self) -> np.ndarray:
        out = np.zeros((self.l, self.n))
        out[self.active.as_array()] = self.values
        return out

    def block(self, i: int) -> np.ndarray:
        if not 0 <= i < self.l:
            raise IndexError(f"arc index {i} out of range [0, {self.l})")
        try:
            pos = self.active.members.index(i)
        except ValueError:
            return np.zeros(self.n)
        return self.values[pos].copy()

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


class ArcConstraintSystem:
    """The matrix family ``A_i`` and right-hand sides ``b_i`` over arcs.

    Parameters
    ----------
    m, n : int
        Number of blocks and block dimension.
    rows : sequence
        One entry per arc.  Either a pair ``(s, t)`` with ``s != t`` (so that
        ``A_i x = x_s - x_t``) or an ``(n, m*n)`` array.
    b : array_like, optional
        Right-hand side with shape ``(l, n)``; zero when omitted.
    """

    def __init__(self, m: int, n: int, rows: Sequence, b=None):
        if m < 1 or n < 1:
            raise DimensionError(f"need m >= 1 and n >= 1, got m={m}, n={n}")
        self.m, self.n = int(m), int(n)
        parsed = []
        for i, row in enumerate(rows):
            if isinstance(row, tuple) and len(row) == 2 and all(
                isinstance(v, (int, np.integer)) for v in row
            ):
                s, t = int(row[0]), int(row[1])
                if s == t or not (0 <= s < m and 0 <= t < m):
                    raise ValueError(f"arc {i}: invalid consensus pair {row} for m={m}")
                parsed.append((s, t))
            else:
                mat = np.array(row, dtype=np.float64)
                if mat.shape != (n, m * n):
                    raise DimensionError(
                        f"arc {i}: dense row block must have shape ({n}, {m * n}), got {mat.shape}"
                    )
                mat.setflags(write=False)
                parsed.append(mat)
        self.rows = tuple(parsed)
        self.l = len(parsed)
        b = np.zeros((self.l, n)) if b is None else np.array(b, dtype=np.float64)
        if b.size != self.l * n:
            raise DimensionError(f"b must have l={self.l} blocks of dimension n={n}, got size {b.size}")
        b = b.reshape(self.l, n)
        b.setflags(write=False)
        self.b = b

        self._pair_idx = np.array(
            [i for i, r in enumerate(self.rows) if isinstance(r, tuple)], dtype=np.intp
        )
        self._src = np.full(self.l, -1, dtype=np.intp)
        self._dst = np.full(self.l, -1, dtype=np.intp)
        for i in self._pair_idx:
            self._src[i], self._dst[i] = self.rows[i]
        self._dense_idx = [i for i, r in enumerate(self.rows) if not isinstance(r, tuple)]

    @classmethod
    def consensus(cls, m: int, n: int, arcs: Sequence[tuple[int, int]]) -> "ArcConstraintSystem":
        return cls(m, n, [(int(s), int(t)) for s, t in arcs])

    @property
    def is_consensus(self) -> bool:
        """True when every row is a consensus pair and ``b = 0``."""
        return not self._dense_idx and not np.any(self.b)

    @property
    def arcs(self) -> list:
        return [r for r in self.rows if isinstance(r, tuple)]

    def row_matrix(self, i: int) -> np.ndarray:
        """Dense ``(n, m*n)`` matrix of row block `i`."""
        row = self.rows[i]
        if not isinstance(row, tuple):
            return np.array(row)
        s, t = row
        out = np.zeros((self.n, self.m * self.n))
        eye = np.eye(self.n)
        out[:, s * self.n:(s + 1) * self.n] = eye
        out[:, t * self.n:(t + 1) * self.n] = -eye
        return out

    def dense(self, I: IndexSet | None = None) -> np.ndarray:
        """Stack ``A_I`` as a dense ``(|I|*n, m*n)`` matrix."""
        I = IndexSet.full(self.l) if I is None else I
        if not len(I):
            return np.zeros((0, self.m * self.n))
        return np.vstack([self.row_matrix(i) for i in I])

    def b_of(self, I: IndexSet) -> np.ndarray:
        return self.b[I.as_array()]

    def full_set(self) -> IndexSet:
        return IndexSet.full(self.l)

    def check_index_set(self, I: IndexSet, name: str = "I"):
        if I.universe_size != self.l:
            raise DimensionError(
                f"{name}: index set universe is {I.universe_size}, system has l={self.l} arcs"
            )

    def __repr__(self):
        kind = "consensus" if self.is_consensus else "general"
        return f"ArcConstraintSystem(m={self.m}, n={self.n}, l={self.l}, {kind})"


def apply_A(sys: ArcConstraintSystem, I: IndexSet, x) -> np.ndarray:
    """Evaluate ``A_i x`` on the arcs of `I`.

    Returns an ``(l, n)`` array whose rows outside `I` are zero.
    """
    sys.check_index_set(I)
    x = as_block_vector(x, sys.m, sys.n)
    out = np.zeros((sys.l, sys.n))
    if not len(I):
        return out
    mask = I.mask()
    pairs = sys._pair_idx[mask[sys._pair_idx]]
    out[pairs] = x[sys._src[pairs]] - x[sys._dst[pairs]]
    flat = x.reshape(-1)
    for i in sys._dense_idx:
        if mask[i]:
            out[i] = sys.rows[i] @ flat
    return out


def apply_A_transpose(sys: ArcConstraintSystem, I: IndexSet, y) -> np.ndarray:
    """Evaluate ``sum_{i in I} A_i^T y_i`` as an ``(m, n)`` array.

    `y` is a :class:`DualVector` or a dense ``(l, n)`` array; blocks outside
    `I` are ignored.  For consensus rows the result is accumulated as the sum
    over outgoing arcs minus the sum over incoming arcs, each taken in
    ascending arc order.
    """
    sys.check_index_set(I)
    if isinstance(y, DualVector):
        if y.l != sys.l or (len(y.active) and y.n != sys.n):
            raise DimensionError(f"dual has shape (l={y.l}, n={y.n}), system has l={sys.l}, n={sys.n}")
        y = y.dense() if len(y.active) else np.zeros((sys.l, sys.n))
    else:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (sys.l, sys.n):
            raise DimensionError(f"dense dual must have shape ({sys.l}, {sys.n}), got {y.shape}")
    mask = I.mask()
    pairs = sys._pair_idx[mask[sys._pair_idx]]
    outgoing = np.zeros((sys.m, sys.n))
    incoming = np.zeros((sys.m, sys.n))
    np.add.at(outgoing, sys._src[pairs], y[pairs])
    np.add.at(incoming, sys._dst[pairs], y[pairs])
    out = outgoing - incoming
    for i in sys._dense_idx:
        if mask[i]:
            out += (sys.rows[i].T @ y[i]).reshape(sys.m, sys.n)
    return out


def project_Y(I: IndexSet, y: DualVector) -> DualVector:
    """Project `y` onto ``Y_I`` by dropping the blocks outside `I`."""
    if I.universe_size != y.l:
        raise DimensionError(f"index set universe {I.universe_size} != dual length l={y.l}")
    keep = [pos for pos, i in enumerate(y.active.members) if i in I]
    active = IndexSet(y.l, tuple(y.active.members[pos] for pos in keep))
    return DualVector(active, y.values[keep].reshape(len(keep), y.n))


def _start_vector(m: int, n: int) -> np.ndarray:
    # fixed seed: deterministic, and generic enough to excite every eigendirection
    v = np.random.default_rng(20240611).standard_normal((m, n))
    return v / np.linalg.norm(v)


def operator_norm(sys: ArcConstraintSystem, I: IndexSet, tol: float = 1e-10,
                  max_iter: int | None = None) -> float:
    """Largest singular value of ``A_I`` by power iteration on ``A_I^T A_I``.

    Iteration stops once the eigen-residual ``||B v - rho v||`` falls below
    ``tol * rho``.  If `max_iter` is reached first, the current estimate is
    returned inflated by 1% so that stepsizes derived from it stay safe.
    """
    sys.check_index_set(I)
    if not len(I):
        raise ValueError("operator norm of an empty constraint system is undefined")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = max(10 * sys.m * sys.n, 50000)
    v = _start_vector(sys.m, sys.n)
    rho = 0.0
    for _ in range(max_iter):
        w = apply_A_transpose(sys, I, apply_A(sys, I, v))
        rho = float(np.vdot(v, w))
        wnorm = np.linalg.norm(w)
        if wnorm == 0.0:
            return 0.0
        if np.linalg.norm(w - rho * v) <= tol * rho:
            return float(np.sqrt(rho))
        v = w / wnorm
    return 1.01 * float(np.sqrt(max(rho, 0.0)))


def _components(m: int, pairs) -> np.ndarray:
    pairs = list(pairs)
    rows = [s for s, _ in pairs]
    cols = [t for _, t in pairs]
    graph = coo_matrix((np.ones(len(pairs)), (rows, cols)), shape=(m, m))
    _, labels = connected_components(graph, directed=False)
    return labels


def _same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    # labelings are arbitrary; compare the induced equivalence relations
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def is_basic_index_set(sys: ArcConstraintSystem, I: IndexSet, J: IndexSet,
                       rtol: float = 1e-10) -> bool:
    """Whether ``A_I x = b_I`` implies ``A_J x = b_J``.

    Consensus systems with ``b = 0`` compare the vertex partitions induced by
    the arcs of `I` and of `J`.  Other systems compare ranks: the rows of
    ``A_J`` must lie in the row space of ``A_I`` and the right-hand sides must
    agree on it.  An inconsistent ``A_I x = b_I`` implies anything, so it is
    reported as basic.
    """
    sys.check_index_set(I, "I")
    sys.check_index_set(J, "J")
    if not I.issubset(J):
        raise ValueError("is_basic_index_set requires I to be a subset of J")
    if sys.is_consensus:
        lab_i = _components(sys.m, [sys.rows[i] for i in I])
        lab_j = _components(sys.m, [sys.rows[i] for i in J])
        return _same_partition(lab_i, lab_j)

    A_I, A_J = sys.dense(I), sys.dense(J)
    b_I, b_J = sys.b_of(I).reshape(-1, 1), sys.b_of(J).reshape(-1, 1)

    def rank(mat):
        if mat.size == 0:
            return 0
        scale = max(1.0, float(np.abs(mat).max()))
        return int(np.linalg.matrix_rank(mat, tol=rtol * scale * max(mat.shape)))

    r_i = rank(A_I)
    aug_i = np.hstack([A_I, b_I]) if len(I) else np.zeros((0, sys.m * sys.n + 1))
    if rank(aug_i) > r_i:
        return True
    if rank(np.vstack([A_I, A_J])) != r_i:
        return False
    aug_j = np.hstack([A_J, b_J])
    return rank(np.vstack([aug_i, aug_j])) == r_i
