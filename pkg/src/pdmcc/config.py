"""Experiment configuration: JSON schema, validation and object construction.

A configuration file looks like::

    {
      "seed": 0,
      "engine": "pdm",
      "problem": {"kind": "quadratic_consensus", "m": 2, "n": 1,
                  "params": {"centers": [[0.0], [2.0]]}},
      "graph": {"generator": "complete"},
      "schedule": {"kind": "static"},
      "stepsize": {"tau": 0.1, "mode": "per_iteration_norm"},
      "stopping": {"epsilon": 1e-8, "budget": 10000},
      "outputs": {"trace": "trace.csv", "summary": "summary.json"}
    }

Graph generators: ``complete``, ``ring``, ``star``, ``path``, ``random_gnp``
(with ``p``) and ``edges`` (with ``edges``, a list of vertex pairs).
Schedules: ``static`` (``set``), ``cyclic`` and ``adversarial`` (``sets``),
``random_with_core`` (``core``, ``extra_probability``).  Index sets are
lists of arc indices or one of the strings ``"all"``, ``"none"``,
``"spanning_tree"``.  Every random choice derives from the top-level
``seed``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .blocks import IndexSet
from .pdm import StepsizePolicy, StoppingRule
from .problems import BUILTIN_KINDS, ProblemInstance, make_builtin
from .topology import (
    AdversarialSchedule,
    CommGraph,
    CyclicSchedule,
    RandomWithCoreSchedule,
    StaticSchedule,
    max_degree,
    spanning_tree,
)

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "build"]

GENERATORS = ("complete", "ring", "star", "path", "random_gnp", "edges")
SCHEDULES = ("static", "cyclic", "random_with_core", "adversarial")
ENGINES = ("pdm", "pdmi", "both")
STEP_MODES = ("per_iteration_norm", "fixed_upper_bound", "constant")

# sub-seeds keep components independent of each other
_PROBLEM_STREAM, _GRAPH_STREAM, _SCHEDULE_STREAM, _START_STREAM = 1, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; `field` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


@dataclass
class ExperimentConfig:
    problem: dict
    graph: dict = field(default_factory=lambda: {"generator": "complete"})
    schedule: dict = field(default_factory=lambda: {"kind": "static"})
    stepsize: dict = field(default_factory=lambda: {"tau": 0.1, "mode": "per_iteration_norm"})
    stopping: dict = field(default_factory=lambda: {"epsilon": 1e-8, "budget": 10000})
    outputs: dict = field(default_factory=dict)
    engine: str = "pdm"
    seed: int = 0
    initial: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        if "problem" not in data:
            raise ConfigError("problem", "required")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self):
        for name in ("problem", "graph", "schedule", "stepsize", "stopping", "outputs", "initial", "bench"):
            if not isinstance(getattr(self, name), dict):
                raise ConfigError(name, "must be an object")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed", f"must be an integer, got {self.seed!r}")
        if self.engine not in ENGINES:
            raise ConfigError("engine", f"must be one of {ENGINES}, got {self.engine!r}")

        p = self.problem
        if p.get("kind") not in BUILTIN_KINDS:
            raise ConfigError("problem.kind", f"must be one of {BUILTIN_KINDS}, got {p.get('kind')!r}")
        for key in ("m", "n"):
            if not isinstance(p.get(key), int) or p[key] < 1:
                raise ConfigError(f"problem.{key}", f"must be a positive integer, got {p.get(key)!r}")
        if not isinstance(p.get("params", {}), dict):
            raise ConfigError("problem.params", "must be an object")

        g = self.graph
        if g.get("generator", "complete") not in GENERATORS:
            raise ConfigError("graph.generator", f"must be one of {GENERATORS}, got {g.get('generator')!r}")
        if g.get("generator") == "random_gnp" and not 0.0 <= float(g.get("p", -1)) <= 1.0:
            raise ConfigError("graph.p", "edge probability in [0, 1] required for random_gnp")
        if g.get("generator") == "edges" and not isinstance(g.get("edges"), list):
            raise ConfigError("graph.edges", "a list of [s, t] pairs is required")

        s = self.schedule
        if s.get("kind", "static") not in SCHEDULES:
            raise ConfigError("schedule.kind", f"must be one of {SCHEDULES}, got {s.get('kind')!r}")
        if s.get("kind") in ("cyclic", "adversarial") and not s.get("sets"):
            raise ConfigError("schedule.sets", "a nonempty list of index sets is required")
        if s.get("kind") == "random_with_core":
            prob = s.get("extra_probability", None)
            if not isinstance(prob, (int, float)) or not 0.0 <= prob <= 1.0:
                raise ConfigError("schedule.extra_probability", f"must be in [0, 1], got {prob!r}")

        st = self.stepsize
        tau = st.get("tau", 0.1)
        if not isinstance(tau, (int, float)) or not 0.0 < tau < 1.0:
            raise ConfigError("stepsize.tau", f"must lie in (0, 1), got {tau!r}")
        if st.get("mode", "per_iteration_norm") not in STEP_MODES:
            raise ConfigError("stepsize.mode", f"must be one of {STEP_MODES}, got {st.get('mode')!r}")
        if st.get("mode") == "constant" and not (isinstance(st.get("value"), (int, float)) and st["value"] > 0):
            raise ConfigError("stepsize.value", "a positive value is required for constant mode")
        if st.get("override") is not None and not (isinstance(st["override"], (int, float)) and st["override"] > 0):
            raise ConfigError("stepsize.override", "must be a positive number")

        sp = self.stopping
        budget = sp.get("budget", 10000)
        if not isinstance(budget, int) or budget < 1:
            raise ConfigError("stopping.budget", f"must be an integer >= 1, got {budget!r}")
        eps = sp.get("epsilon", 1e-8)
        if eps is not None and not (isinstance(eps, (int, float)) and eps > 0):
            raise ConfigError("stopping.epsilon", f"must be positive or null, got {eps!r}")

        if self.bench:
            ms = self.bench.get("m_values")
            if not isinstance(ms, list) or not ms or not all(isinstance(v, int) and v >= 1 for v in ms):
                raise ConfigError("bench.m_values", "a nonempty list of positive integers is required")


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(data)


def _sub_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def build_graph(cfg: ExperimentConfig, m: int | None = None) -> CommGraph:
    g = cfg.graph
    m = cfg.problem["m"] if m is None else m
    gen = g.get("generator", "complete")
    try:
        if gen == "random_gnp":
            return CommGraph.random_gnp(m, float(g["p"]), _sub_seed(cfg.seed, _GRAPH_STREAM))
        if gen == "edges":
            return CommGraph.from_edges(m, g["edges"])
        return getattr(CommGraph, gen)(m)
    except (ValueError, IndexError, TypeError) as exc:
        raise ConfigError(f"graph.{'edges' if gen == 'edges' else 'generator'}", str(exc)) from None


def _index_set(graph: CommGraph, spec, where: str) -> IndexSet:
    if spec == "all":
        return graph.full_set()
    if spec == "none":
        return IndexSet.empty(graph.l)
    if spec == "spanning_tree":
        return spanning_tree(graph)
    if not isinstance(spec, list) or not all(isinstance(i, int) for i in spec):
        raise ConfigError(where, f"expected a list of arc indices or 'all'/'none'/'spanning_tree', got {spec!r}")
    try:
        return graph.index_set(spec)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def build_schedule(cfg: ExperimentConfig, graph: CommGraph):
    s = cfg.schedule
    kind = s.get("kind", "static")
    if kind == "static":
        return StaticSchedule(graph, _index_set(graph, s.get("set", "all"), "schedule.set"))
    if kind in ("cyclic", "adversarial"):
        sets = [_index_set(graph, spec, f"schedule.sets[{j}]") for j, spec in enumerate(s["sets"])]
        return (CyclicSchedule if kind == "cyclic" else AdversarialSchedule)(graph, tuple(sets))
    core = _index_set(graph, s.get("core", "spanning_tree"), "schedule.core")
    return RandomWithCoreSchedule(graph, core, float(s["extra_probability"]),
                                  _sub_seed(cfg.seed, _SCHEDULE_STREAM))


def build_policy(cfg: ExperimentConfig, graph: CommGraph) -> StepsizePolicy:
    st = cfg.stepsize
    mode = st.get("mode", "per_iteration_norm")
    bound = st.get("degree_bound", "auto")
    if mode == "fixed_upper_bound" and bound in (None, "auto"):
        # every active set is a subset of the full graph
        bound = max(max_degree(graph, graph.full_set()), 1)
    try:
        return StepsizePolicy(float(st.get("tau", 0.1)), mode,
                              bound if mode == "fixed_upper_bound" else None,
                              st.get("value"))
    except ValueError as exc:
        raise ConfigError("stepsize", str(exc)) from None


def build_problem(cfg: ExperimentConfig, graph: CommGraph) -> ProblemInstance:
    p = cfg.problem
    params = dict(p.get("params", {}))
    try:
        return make_builtin(p["kind"], graph, n=p["n"], seed=_sub_seed(cfg.seed, _PROBLEM_STREAM), **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError("problem.params", str(exc)) from None


def initial_point(cfg: ExperimentConfig, m: int, n: int):
    init = cfg.initial
    if init.get("x0") is not None:
        x0 = np.asarray(init["x0"], dtype=np.float64)
        if x0.size != m * n:
            raise ConfigError("initial.x0", f"expected {m * n} coordinates (m={m}, n={n}), got {x0.size}")
        return x0.reshape(m, n)
    scale = init.get("random_scale")
    if scale is None:
        return None
    rng = np.random.default_rng(_sub_seed(cfg.seed, _START_STREAM))
    return float(scale) * rng.standard_normal((m, n))


def build(cfg: ExperimentConfig, m: int | None = None):
    """Instantiate ``(problem, schedule, policy, stop, budget, x0)`` from a config."""
    graph = build_graph(cfg, m)
    if m is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "problem": {**cfg.problem, "m": m}})
    prob = build_problem(cfg, graph)
    schedule = build_schedule(cfg, graph)
    policy = build_policy(cfg, graph)
    eps = cfg.stopping.get("epsilon", 1e-8)
    stop = StoppingRule(float(eps)) if eps is not None else None
    x0 = initial_point(cfg, prob.m, prob.n)
    return prob, schedule, policy, stop, int(cfg.stopping.get("budget", 10000)), x0
