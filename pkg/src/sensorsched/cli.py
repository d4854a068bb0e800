"""Command-line front end.

Subcommands: solve (probability distribution + budget), schedule (turn a
distribution into a concrete sequence), simulate (filter along a schedule
and export traces), compare (methods side by side). Scenarios load from a
JSON config; every artifact is a deterministic CSV or text file, so a
rerun with the same config and seeds is byte-identical.

Exit codes: 0 success, 2 configuration problem, 3 infeasible scenario,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributed import line_graph, complete_graph, ring_graph, solve_distributed
from .model import (
    DelayChainSpec,
    LtiTarget,
    ScheduleDistribution,
    expand_delay_chain,
    validate_target,
)
from .optimizer import Constraints, solve_distribution
from .schedule import (
    BackoffConfig,
    ScheduleSequence,
    build_min_consecutive_schedule,
    max_run_length,
    sample_stochastic_schedule,
    simulate_csma_schedule,
    write_sequence,
)
from .simulate import (
    evaluate_schedule,
    monte_carlo_expected_cost,
    sliding_window_schedule,
)


class ConfigError(Exception):
    """The scenario file or command arguments are invalid."""


class InfeasibleError(Exception):
    """The scenario admits no valid probability assignment."""


EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


@dataclass
class Scenario:
    targets: list
    constraints: Constraints | None
    adjacency: np.ndarray | None
    outer_tol: float
    inner_tol: float
    mare_tol: float
    consensus_tol: float
    L: int
    schedule_seed: int
    alpha: float
    epsilon_jitter: float
    duration: int | None
    T: int
    runs: int
    window: int | None
    sim_seed: int


def _check_keys(d: dict, allowed: set[str], context: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {', '.join(sorted(unknown))}")


def _matrix(value, context: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{context}: not a numeric matrix ({e})") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    return arr


def _parse_target(entry: dict, index: int) -> LtiTarget:
    context = f"targets[{index}]"
    if not isinstance(entry, dict):
        raise ConfigError(f"{context}: expected an object")
    if "chain" in entry:
        _check_keys(entry, {"chain", "label"}, context)
        chain = entry["chain"]
        _check_keys(chain, {"a", "Q", "R", "d"}, f"{context}.chain")
        try:
            spec = DelayChainSpec(
                a=float(chain["a"]),
                Q=float(chain["Q"]),
                R=float(chain["R"]),
                d=int(chain.get("d", 0)),
            )
        except KeyError as e:
            raise ConfigError(f"{context}.chain: missing key {e}") from None
        return expand_delay_chain(spec, label=entry.get("label", f"chain-{index}"))
    _check_keys(entry, {"A", "C", "Q", "R", "label", "cost_weights"}, context)
    try:
        target = LtiTarget(
            A=_matrix(entry["A"], f"{context}.A"),
            C=_matrix(entry["C"], f"{context}.C"),
            Q=_matrix(entry["Q"], f"{context}.Q"),
            R=_matrix(entry["R"], f"{context}.R"),
            label=entry.get("label", f"target-{index}"),
            cost_weights=entry.get("cost_weights"),
        )
    except KeyError as e:
        raise ConfigError(f"{context}: missing matrix {e}") from None
    except ValueError as e:
        raise ConfigError(f"{context}: {e}") from None
    return target


def _parse_topology(value, n: int) -> np.ndarray:
    if isinstance(value, str):
        makers = {"complete": complete_graph, "ring": ring_graph, "line": line_graph}
        if value not in makers:
            raise ConfigError(
                f"topology: unknown name {value!r} (use complete, ring, line, "
                "or explicit neighbor lists)"
            )
        return makers[value](n)
    if not isinstance(value, list) or len(value) != n:
        raise ConfigError(f"topology: need one neighbor list per target ({n})")
    adj = np.zeros((n, n), dtype=bool)
    for i, neighbors in enumerate(value):
        for j in neighbors:
            if not isinstance(j, int) or not 0 <= j < n or j == i:
                raise ConfigError(f"topology[{i}]: invalid neighbor {j!r}")
            adj[i, j] = adj[j, i] = True
    return adj


def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    _check_keys(
        raw,
        {"targets", "constraints", "topology", "solver", "schedule", "simulate"},
        "config",
    )
    entries = raw.get("targets")
    if not entries:
        raise ConfigError("config declares no targets")
    targets = [_parse_target(e, i) for i, e in enumerate(entries)]
    for i, t in enumerate(targets):
        report = validate_target(t)
        for w in report.warnings:
            print(f"warning: targets[{i}]: {w}", file=sys.stderr)
        if not report.ok:
            raise ConfigError(
                f"targets[{i}] failed validation: " + "; ".join(report.failures)
            )

    constraints = None
    if "constraints" in raw:
        c = raw["constraints"]
        _check_keys(c, {"priorities", "loss"}, "constraints")
        try:
            constraints = Constraints(
                priorities=c.get("priorities"), loss=c.get("loss")
            )
        except ValueError as e:
            raise ConfigError(f"constraints: {e}") from None

    adjacency = None
    if "topology" in raw:
        adjacency = _parse_topology(raw["topology"], len(targets))

    solver = raw.get("solver", {})
    _check_keys(
        solver, {"outer_tol", "inner_tol", "mare_tol", "consensus_tol"}, "solver"
    )
    sched = raw.get("schedule", {})
    _check_keys(
        sched, {"L", "seed", "alpha", "epsilon_jitter", "duration"}, "schedule"
    )
    sim = raw.get("simulate", {})
    _check_keys(sim, {"T", "runs", "window", "seed"}, "simulate")

    return Scenario(
        targets=targets,
        constraints=constraints,
        adjacency=adjacency,
        outer_tol=float(solver.get("outer_tol", 1e-3)),
        inner_tol=float(solver.get("inner_tol", 1e-5)),
        mare_tol=float(solver.get("mare_tol", 1e-9)),
        consensus_tol=float(solver.get("consensus_tol", 1e-12)),
        L=int(sched.get("L", 500)),
        schedule_seed=int(sched.get("seed", 1)),
        alpha=float(sched.get("alpha", 0.01)),
        epsilon_jitter=float(sched.get("epsilon_jitter", 1e-3)),
        duration=int(sched["duration"]) if "duration" in sched else None,
        T=int(sim.get("T", 500)),
        runs=int(sim.get("runs", 1000)),
        window=int(sim["window"]) if "window" in sim else None,
        sim_seed=int(sim.get("seed", 1)),
    )


def _fmt(x: float) -> str:
    """Shortest exact decimal form; CSV cells round-trip to the same float."""
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _solve(scn: Scenario, distributed: bool):
    """Run the solver, echoing any infeasibility diagnosis."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if distributed or scn.adjacency is not None:
            report = solve_distributed(
                scn.targets,
                adjacency=scn.adjacency,
                constraints=scn.constraints,
                outer_tol=scn.outer_tol,
                inner_tol=scn.inner_tol,
                mare_tol=scn.mare_tol,
                consensus_tol=scn.consensus_tol,
            ).solution
        else:
            report = solve_distribution(
                scn.targets,
                constraints=scn.constraints,
                outer_tol=scn.outer_tol,
                inner_tol=scn.inner_tol,
                mare_tol=scn.mare_tol,
            )
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if not report.feasible:
        detail = "; ".join(str(w.message) for w in caught) or "scenario is infeasible"
        raise InfeasibleError(detail)
    return report


def _write_solution(path: Path, scn: Scenario, report) -> None:
    rows = [
        [
            i,
            scn.targets[i].label,
            _fmt(pt.q),
            _fmt(pt.cost),
            _fmt(pt.q_critical),
            _fmt(report.gamma_star),
            "true" if report.feasible else "false",
        ]
        for i, pt in enumerate(report.per_target)
    ]
    _write_csv(
        path,
        ["target", "label", "q_star", "cost", "q_critical", "gamma_star", "feasible"],
        rows,
    )


def _load_distribution(out_dir: Path, scn: Scenario, distributed: bool):
    """Distribution from a prior solution.csv if present, else a fresh solve."""
    path = out_dir / "solution.csv"
    if path.exists():
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if len(rows) == len(scn.targets):
            q = np.array([float(r["q_star"]) for r in rows])
            return ScheduleDistribution(q)
        print(
            f"warning: {path} is for {len(rows)} targets, re-solving",
            file=sys.stderr,
        )
    return _solve(scn, distributed).q_star


def cmd_solve(scn: Scenario, args) -> int:
    report = _solve(scn, args.distributed)
    out = Path(args.out)
    print(f"gamma_star = {report.gamma_star:.6g}  "
          f"(outer iterations: {report.outer_iterations}, "
          f"inner: {report.inner_iterations})")
    print(f"{'target':>6}  {'label':<16} {'q_star':>10} {'cost':>12} {'q_critical':>11}")
    for i, pt in enumerate(report.per_target):
        print(
            f"{i:>6}  {scn.targets[i].label:<16} {pt.q:>10.4f} "
            f"{pt.cost:>12.4f} {pt.q_critical:>11.4f}"
        )
    _write_solution(out / "solution.csv", scn, report)
    print(f"wrote {out / 'solution.csv'}")
    return 0


def _build_sequence(scn: Scenario, q: ScheduleDistribution, kind: str, length: int, seed: int):
    if kind == "random":
        return sample_stochastic_schedule(q, length, seed)
    if kind == "minconsec":
        return build_min_consecutive_schedule(q, length)
    cfg = BackoffConfig(
        alpha=scn.alpha,
        epsilon_jitter=scn.epsilon_jitter,
        duration=length,
    )
    return simulate_csma_schedule(q, cfg, seed)


def cmd_schedule(scn: Scenario, args) -> int:
    out = Path(args.out)
    q = _load_distribution(out, scn, args.distributed)
    length = scn.duration if (args.kind == "csma" and scn.duration) else scn.L
    seq = _build_sequence(scn, q, args.kind, length, scn.schedule_seed)
    path = out / f"schedule_{args.kind}.txt"
    write_sequence(seq, path)
    counts = seq.counts()
    print(f"kind = {args.kind}, L = {len(seq)}")
    print("counts: " + ", ".join(f"{scn.targets[i].label}={int(c)}" for i, c in enumerate(counts)))
    print(f"max run length = {max_run_length(seq)}")
    print(f"wrote {path}")
    return 0


def _tile_to(seq_steps: np.ndarray, T: int) -> np.ndarray:
    reps = -(-T // seq_steps.size)
    return np.tile(seq_steps, reps)[:T]


def cmd_simulate(scn: Scenario, args) -> int:
    out = Path(args.out)
    q = _load_distribution(out, scn, args.distributed)
    if args.kind == "random":
        mc = monte_carlo_expected_cost(
            scn.targets, q, scn.T, scn.runs, scn.sim_seed, keep_mean_series=True
        )
        series = mc.mean_trace_series
        exp = mc.expected
        print(f"stochastic schedule, T = {scn.T}, runs = {scn.runs}")
        for i, t in enumerate(scn.targets):
            print(
                f"  {t.label}: expected trace {exp.per_target_avg_trace[i]:.4f} "
                f"± {exp.half_width[i]:.4f}"
            )
        print(f"max expected cost = {exp.max_over_targets:.4f}")
    else:
        base = _build_sequence(
            scn, q, args.kind,
            scn.T if args.kind == "csma" else scn.L,
            scn.schedule_seed,
        )
        steps = _tile_to(base.steps, scn.T)
        seq = ScheduleSequence(steps=steps, n_targets=len(q))
        report = evaluate_schedule(scn.targets, seq, keep_series=True)
        series = report.trace_series
        print(f"{args.kind} schedule, T = {scn.T}")
        for i, t in enumerate(scn.targets):
            print(f"  {t.label}: avg trace {report.per_target_avg_trace[i]:.4f}")
        print(f"max cost = {report.max_over_targets:.4f}")
    header = ["step"] + [f"target_{i}_trace" for i in range(len(scn.targets))]
    rows = [[k] + [_fmt(v) for v in series[k]] for k in range(series.shape[0])]
    _write_csv(out / "traces.csv", header, rows)
    print(f"wrote {out / 'traces.csv'}")
    return 0


def cmd_compare(scn: Scenario, args) -> int:
    out = Path(args.out)
    report = _solve(scn, args.distributed)
    q = report.q_star
    rows: list[list] = []

    rows.append(["bound", _fmt(report.gamma_star), "", "optimized worst-case fixed-point trace"])

    mc = monte_carlo_expected_cost(scn.targets, q, scn.T, scn.runs, scn.sim_seed)
    hw = float(mc.expected.half_width[int(np.argmax(mc.expected.per_target_avg_trace))])
    rows.append(["stochastic", _fmt(mc.expected.max_over_targets), _fmt(hw),
                 f"{scn.runs} runs of T={scn.T}"])

    try:
        base = build_min_consecutive_schedule(q, scn.L)
        tiled = ScheduleSequence(_tile_to(base.steps, scn.T), len(q))
        det = evaluate_schedule(scn.targets, tiled)
        rows.append(["minconsec", _fmt(det.max_over_targets), "",
                     f"L={scn.L} tiled to T={scn.T}"])
    except ValueError as e:
        rows.append(["minconsec", "", "", f"failed: {e}"])

    window = args.window if args.window is not None else scn.window
    if window is not None:
        try:
            _, sw = sliding_window_schedule(scn.targets, window, scn.T)
            rows.append(["sliding_window", _fmt(sw.max_over_targets), "",
                         f"window={window}, T={scn.T}"])
        except ValueError as e:
            rows.append(["sliding_window", "", "", f"failed: {e}"])

    print(f"{'method':<16} {'max cost':>12} {'half width':>11}  note")
    for method, cost, hw_s, note in rows:
        cost_s = f"{float(cost):>12.4f}" if cost else f"{'-':>12}"
        hw_disp = f"{float(hw_s):>11.4f}" if hw_s else f"{'-':>11}"
        print(f"{method:<16} {cost_s} {hw_disp}  {note}")
    _write_csv(out / "comparison.csv", ["method", "max_cost", "half_width", "note"], rows)
    print(f"wrote {out / 'comparison.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensorsched",
        description="Observation scheduling for independent linear targets "
        "sharing one sensor",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("solve", cmd_solve),
        ("schedule", cmd_schedule),
        ("simulate", cmd_simulate),
        ("compare", cmd_compare),
    ):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override schedule and simulation seeds")
        p.add_argument("--distributed", action="store_true",
                       help="solve with the per-node protocol")
        if name in ("schedule", "simulate"):
            p.add_argument("--kind", choices=("random", "minconsec", "csma"),
                           default="random")
        if name in ("simulate", "compare"):
            p.add_argument("--window", type=int, default=None,
                           help="lookahead window for the tree-search baseline")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "window"):
        args.window = None
    try:
        scn = load_scenario(args.config)
        if args.seed is not None:
            scn.schedule_seed = args.seed
            scn.sim_seed = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return args.fn(scn, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    # LinAlgError subclasses ValueError, so the numeric branch must come first.
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
