"""Command-line front end: ``solve``, ``verify`` and ``bench``.

Usage::

    python -m pdmcc solve experiment.json [--trace out.csv] [--seed 3] [--quiet]
    python -m pdmcc verify experiment.json
    python -m pdmcc bench experiment.json

Exit status: 0 on success (``solve``: the stopping rule fired; ``verify``:
every check passed), 2 when ``solve`` exhausts its iteration budget and 1
on any error or failed check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .blocks import DualVector, IndexSet, is_basic_index_set, operator_norm
from .config import ConfigError, ExperimentConfig, build, load_config
from .multiagent import compare_runs, run_pdmi
from .pdm import (
    TRACE_FIELDS,
    EmptyStepsizeInterval,
    check_fejer,
    run,
    stepsize_upper_bound,
)
from .problems import ProxNotConverged, prox_inequality_gap, saddle_residual
from .topology import is_connected, max_degree, schedule_next

__all__ = ["main", "cmd_solve", "cmd_verify", "cmd_bench", "write_trace"]

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2

# audits on visited active sets are capped to keep verify interactive
MAX_AUDITED_SETS = 200
PROX_SAMPLES = 200


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *args):
        if not self.quiet:
            print(*args)


def write_trace(path, trace):
    """Write iteration records as CSV, one row per iteration."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for rec in trace:
            w.writerow([repr(v) if isinstance(v, float) else v for v in rec.as_row()])


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2))


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trace is not None:
        cfg.outputs = {**cfg.outputs, "trace": args.trace}
    return cfg


def _run_engine(engine, prob, schedule, policy, stop, budget, x0, override, record):
    fn = run if engine == "pdm" else run_pdmi
    return fn(prob, schedule, policy, stop, budget, x0=x0, record_iterates=record,
              lam_override=override)


def _summary(result, engine: str) -> dict:
    last = result.trace[-1]
    st = result.state
    return {
        "engine": engine,
        "stop_reason": result.stop_reason,
        "iterations": result.iterations,
        "final_x": st.x.tolist(),
        "final_y": st.y.dense().tolist(),
        "final_active": list(st.active),
        "final_lambda": last.lam,
        "objective": last.objective,
        "primal_residual": last.primal_residual,
        "full_residual": last.full_residual,
        "step_norm": last.step_norm,
        "dist_to_ref": None if math.isnan(last.dist_to_ref) else last.dist_to_ref,
    }


def cmd_solve(args) -> int:
    out = _Out(args.quiet)
    cfg = _config(args)
    prob, schedule, policy, stop, budget, x0 = build(cfg)
    override = cfg.stepsize.get("override")
    primary = "pdmi" if cfg.engine == "pdmi" else "pdm"
    both = cfg.engine == "both"

    t0 = time.perf_counter()
    result = _run_engine(primary, prob, schedule, policy, stop, budget, x0, override, both)
    summary = _summary(result, primary)
    summary["seconds"] = time.perf_counter() - t0
    status = EXIT_OK if result.converged else EXIT_BUDGET

    ledger_owner = result if primary == "pdmi" else None
    if both:
        other = _run_engine("pdmi", prob, schedule, policy, stop, budget, x0, override, True)
        ledger_owner = other
        try:
            rep = compare_runs(result, other)
            compare = {"passed": rep.passed, "max_x_diff": rep.max_x_diff,
                       "max_y_diff": rep.max_y_diff, "iterations": rep.iterations, "tol": rep.tol}
            out(str(rep))
        except ValueError as exc:
            compare = {"passed": False, "error": str(exc)}
            out(f"FAIL: {exc}")
        summary["compare"] = compare
        if cfg.outputs.get("compare"):
            _write_json(cfg.outputs["compare"], compare)
        if not compare["passed"]:
            status = EXIT_ERROR

    if cfg.outputs.get("trace"):
        write_trace(cfg.outputs["trace"], result.trace)
    if cfg.outputs.get("ledger") and ledger_owner is not None:
        ledger_owner.ledger.write_jsonl(cfg.outputs["ledger"])
        summary["messages"] = len(ledger_owner.ledger)
    if cfg.outputs.get("summary"):
        _write_json(cfg.outputs["summary"], summary)

    out(f"{primary}: {result.stop_reason} after {result.iterations} iterations; "
        f"full residual {summary['full_residual']:.3e}, step {summary['step_norm']:.3e}")
    return status


def _missing_reference(prob) -> str:
    what = "reference saddle point" if prob.reference is None else "reference dual"
    return (f"verify needs a {what} (x*, y*) for the {prob.kind} instance. "
            "For feasibility-type problems, any point x* that minimizes every f_i over X_i "
            "and satisfies all consensus constraints gives the saddle point (x*, 0), valid for "
            "every active set; supply it as problem.params.feasible_point.")


def _distinct_sets(schedule, iterations: int) -> list[IndexSet]:
    seen, out = set(), []
    for k in range(1, iterations + 1):
        I = schedule_next(schedule, k)
        if I not in seen:
            seen.add(I)
            out.append(I)
    return out


def _prox_sampler(prob, seed: int, samples: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst_rel = -math.inf
    for _ in range(samples):
        u = 3.0 * rng.standard_normal((prob.m, prob.n))
        lin = rng.standard_normal((prob.m, prob.n))
        lam = float(10.0 ** rng.uniform(-2, 1))
        zs = [prob.project(3.0 * rng.standard_normal((prob.m, prob.n))) for _ in range(3)]
        gap = prox_inequality_gap(prob, lin, u, lam, zs, tol=1e-13)
        scale = max(1.0, max(float(np.sum((z - u) ** 2)) for z in zs))
        worst_rel = max(worst_rel, gap / scale)
    return worst_rel <= 1e-9, f"{samples} samples, max scaled gap {worst_rel:.2e}"


def cmd_verify(args) -> int:
    out = _Out(args.quiet)
    cfg = _config(args)
    prob, schedule, policy, _, budget, x0 = build(cfg)
    ref = prob.reference
    if ref is None or ref.y is None:
        print(f"error: {_missing_reference(prob)}", file=sys.stderr)
        return EXIT_ERROR
    override = cfg.stepsize.get("override")
    sys_ = prob.constraints
    graph = prob.graph
    rows = []

    with np.errstate(over="ignore", invalid="ignore"):
        result = run(prob, schedule, policy, None, budget, x0=x0, lam_override=override)
    if cfg.outputs.get("trace"):
        write_trace(cfg.outputs["trace"], result.trace)
    visited = _distinct_sets(schedule, result.iterations)
    audited = visited[:MAX_AUDITED_SETS]
    note = f"{len(audited)} of {len(visited)} active sets"

    # the Fejer inequality presumes the reference is a saddle point for every I_k
    worst = 0.0
    for I in visited:
        if not ref.y.active.issubset(I):
            worst = math.inf
            break
        y_I = DualVector.from_dense(ref.y.dense(), I)
        worst = max(worst, *saddle_residual(prob, I, ref.x, y_I))
    rows.append(("reference saddle point", worst <= 1e-6,
                 f"max residual {worst:.2e} over {len(visited)} active sets"))

    fejer = check_fejer(result, policy.tau)
    rows.append(("fejer monotonicity", fejer.passed, str(fejer)))

    rows.append(("prox three-point inequality", *_prox_sampler(prob, cfg.seed, PROX_SAMPLES)))

    lam_ok, lam_worst = True, 0.0
    for rec in result.trace:
        I = schedule_next(schedule, rec.k)
        if len(I) == 0:
            continue
        ub = stepsize_upper_bound(policy, sys_, I)
        lam_worst = max(lam_worst, rec.lam / ub)
        lam_ok &= rec.lam <= ub * (1 + 1e-12)
    rows.append(("stepsize within bound", lam_ok, f"max lambda / bound = {lam_worst:.4f}"))

    norm_ok, norm_err, bound_ok = True, 0.0, True
    for I in audited:
        if len(I) == 0:
            continue
        est = operator_norm(sys_, I)
        exact = float(np.linalg.norm(sys_.dense(I), 2))
        norm_err = max(norm_err, abs(est - exact) / max(1.0, exact))
        bound_ok &= est <= math.sqrt(2 * max_degree(graph, I)) * (1 + 1e-12)
    norm_ok = norm_err <= 1e-8 and bound_ok
    rows.append(("norm estimate and degree bound", norm_ok, f"{note}, max rel. error {norm_err:.2e}"))

    full = sys_.full_set()
    rank_full = np.linalg.matrix_rank(sys_.dense(full)) if len(full) else 0
    basic_ok = True
    for I in audited:
        basic = is_basic_index_set(sys_, I, full)
        rank_I = np.linalg.matrix_rank(sys_.dense(I)) if len(I) else 0
        basic_ok &= basic == (rank_I == rank_full)
        if is_connected(graph, full):
            basic_ok &= basic == is_connected(graph, I)
    rows.append(("basic set vs rank and connectivity", basic_ok, note))

    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        out(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    passed = all(ok for _, ok, _ in rows)
    out("all checks passed" if passed else "some checks FAILED")
    return EXIT_OK if passed else EXIT_ERROR


BENCH_FIELDS = ("m", "arcs", "rounds", "seconds", "rounds_per_second", "phase0_s", "phase1_s",
                "phase2_s", "phase3_s", "messages", "iterate_sha256")


def _iterate_digest(result) -> str:
    h = hashlib.sha256()
    for rec in result.trace:
        h.update(np.asarray(rec.as_row(), dtype=np.float64).tobytes())
    h.update(result.state.x.tobytes())
    return h.hexdigest()


def cmd_bench(args) -> int:
    out = _Out(args.quiet)
    cfg = _config(args)
    if not cfg.bench:
        raise ConfigError("bench.m_values", "a nonempty list of positive integers is required")
    rounds = cfg.bench.get("rounds", 20)
    if not isinstance(rounds, int) or rounds < 1:
        raise ConfigError("bench.rounds", f"must be an integer >= 1, got {rounds!r}")
    rows = []
    for m in cfg.bench["m_values"]:
        prob, schedule, policy, _, _, x0 = build(cfg, m)
        t0 = time.perf_counter()
        res = run_pdmi(prob, schedule, policy, None, rounds, x0=x0)
        secs = time.perf_counter() - t0
        row = {"m": m, "arcs": prob.constraints.l, "rounds": rounds, "seconds": secs,
               "rounds_per_second": rounds / secs if secs > 0 else math.inf,
               "messages": len(res.ledger), "iterate_sha256": _iterate_digest(res)}
        for ph in ("phase0", "phase1", "phase2", "phase3"):
            row[f"{ph}_s"] = res.timings.get(ph, 0.0)
        rows.append(row)
        out(f"m={m:<5d} arcs={row['arcs']:<6d} {row['rounds_per_second']:10.1f} rounds/s  "
            f"messages={row['messages']}")
    path = cfg.outputs.get("bench") or cfg.outputs.get("trace")
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment configuration (JSON)")
    common.add_argument("--trace", metavar="PATH", help="write the iteration trace CSV here")
    common.add_argument("--seed", type=int, help="override the configuration seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="pdmcc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="run the configured engine(s)").set_defaults(fn=cmd_solve)
    sub.add_parser("verify", parents=[common], help="check convergence certificates").set_defaults(fn=cmd_verify)
    sub.add_parser("bench", parents=[common], help="time the distributed engine").set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, EmptyStepsizeInterval, ProxNotConverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
