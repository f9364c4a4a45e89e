"""Primal-dual proximal method for convex problems with changing linear constraints."""

from .blocks import (
    ArcConstraintSystem,
    DimensionError,
    DualVector,
    IndexSet,
    apply_A,
    apply_A_transpose,
    as_block_vector,
    is_basic_index_set,
    operator_norm,
    project_Y,
)
from .problems import (
    Box,
    HalfspacePenalty,
    ProblemInstance,
    ProxNotConverged,
    Quadratic,
    ReferenceSolution,
    SmoothFunction,
    WholeSpace,
    lagrangian,
    make_builtin,
    objective_value,
    prox_primal,
    saddle_residual,
)
from .topology import (
    AdversarialSchedule,
    CommGraph,
    CyclicSchedule,
    RandomWithCoreSchedule,
    StaticSchedule,
    is_connected,
    kirchhoff,
    max_degree,
    schedule_next,
    spanning_tree,
)
from .pdm import (
    EmptyStepsizeInterval,
    PdmState,
    StepsizePolicy,
    StoppingRule,
    check_fejer,
    pdm_step,
    run,
    stepsize,
)

__version__ = "0.1.0"
