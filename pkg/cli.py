"""
Command-line entry point van de consensus simulator.

    python cli.py run --scenario paper-fixed --out runs/
    python cli.py graph-info --scenario paper-fixed
    python cli.py check-schedule --scenario paper-switching --window 4
    python cli.py verify --preset paper-fixed
    python cli.py sweep --scenario my.json --dt-list 4e-3 2e-3 1e-3 5e-4
    python cli.py export --preset paper-switching --out my.json

Exit codes: 0 success, 1 validatie/config/graaf fout, 2 divergentie, 3 acceptatie gefaald.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Iterable, List, Optional

import numpy as np

from errors import AcceptanceError, ConsensusError
from graphs import (
    DirectedGraphSpec,
    contains_spanning_tree,
    left_null_vector,
    root_set,
    uniformly_jointly_connected,
)
from output_writer import output_dir, run_paths, write_plot_script, write_summary, write_trace_csv
from scenario import get_preset, load_config, load_scenario, save_config
from sim import (
    Scenario,
    acceptance_failures,
    consensus_metrics,
    convergence_study,
    first_order_consensus,
    predicted_equilibrium,
    run,
)

logger = logging.getLogger(__name__)

LOG_LEVEL = os.getenv("CONSENSUS_LOG_LEVEL", "INFO")


def format_vector(values: Iterable[float], digits: int = 4) -> str:
    return "[" + ", ".join(f"{round(float(v), digits) + 0.0:.{digits}g}" for v in values) + "]"


def _agents(indices: Iterable[int]) -> str:
    return format_vector([i + 1 for i in indices], digits=6)


# ----------------- Subcommands -----------------

def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario).with_overrides(
        dt=args.dt, t_end=args.t_end, sample_every=args.sample_every,
    )
    trace = run(scenario)
    summary = consensus_metrics(trace, scenario.thresholds)

    paths = run_paths(output_dir(args.out), scenario.name)
    write_trace_csv(trace, paths["csv"])
    write_summary(summary, paths["summary"])
    if args.plot_script:
        write_plot_script(paths["csv"], scenario.n, paths["plot"])

    print(f"final_disagreement: {summary.final_disagreement:.6g}")
    print(f"final_max_velocity: {summary.final_max_velocity:.6g}")
    if summary.equilibrium_error is not None:
        print(f"equilibrium_error: {summary.equilibrium_error:.6g}")
    print(f"trace: {paths['csv']}")
    return 0


def _print_graph(g: DirectedGraphSpec, alpha: np.ndarray, q0: Optional[np.ndarray], label: str = "") -> None:
    prefix = f"{label} " if label else ""
    tree = contains_spanning_tree(g)
    print(f"{prefix}spanning tree: {str(tree).lower()}")
    if not tree:
        return
    print(f"{prefix}xi = {format_vector(left_null_vector(g).xi)}")
    print(f"{prefix}roots = {_agents(root_set(g))}")
    if q0 is not None:
        print(f"{prefix}predicted equilibrium = {format_vector(predicted_equilibrium(g, alpha, q0))}")


def cmd_graph_info(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    schedule = scenario.schedule
    if schedule.is_fixed:
        _print_graph(schedule.graphs[0], scenario.alpha, scenario.initial.q)
        return 0
    for k, g in enumerate(schedule.graphs, start=1):
        _print_graph(g, scenario.alpha, None, label=f"graph {k}")
    _print_graph(schedule.union(), scenario.alpha, None, label="union")
    return 0


def cmd_check_schedule(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    schedule = scenario.schedule
    window = args.window if args.window is not None else schedule.period
    verdict = uniformly_jointly_connected(schedule, window)
    print(f"uniformly jointly connected: {str(verdict).lower()} (window {window:g} s)")

    # een niet-cyclische schedule is voorbij zijn laatste segment niet gedefinieerd
    horizon = scenario.t_end if schedule.cyclic else min(scenario.t_end, schedule.period)
    _, states = first_order_consensus(schedule, scenario.alpha, scenario.initial.q, horizon, scenario.dt)
    final = states[-1]
    spread = float(np.max(np.linalg.norm(final[:, None, :] - final[None, :, :], axis=-1)))
    print(f"first-order consensus spread after {horizon:g} s: {spread:.3e}")
    return 0


def verify_scenario(scenario: Scenario) -> List[str]:
    trace = run(scenario)
    summary = consensus_metrics(trace, scenario.thresholds)
    require_monotone = all(g.robust == "standard" for g in scenario.gains)
    failures = acceptance_failures(summary, scenario.thresholds, require_monotone=require_monotone)
    print(f"final_disagreement: {summary.final_disagreement:.6g}")
    print(f"final_max_velocity: {summary.final_max_velocity:.6g}")
    if summary.equilibrium_error is not None:
        print(f"equilibrium_error: {summary.equilibrium_error:.6g}")
    return failures


def cmd_verify(args: argparse.Namespace) -> int:
    source = args.preset or args.scenario
    scenario = load_scenario(source)
    failures = verify_scenario(scenario)
    if failures:
        raise AcceptanceError(f"{scenario.name} failed: " + "; ".join(failures))
    print(f"{scenario.name}: PASS")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    if args.t_end is not None:
        scenario = scenario.with_overrides(t_end=args.t_end)
    table = convergence_study(scenario, args.dt_list)
    print(table.to_string(index=False) if not table.empty else "no comparison rows (need at least two dt values)")
    if args.out:
        path = os.path.join(output_dir(args.out), f"{scenario.name}_convergence.csv")
        table.to_csv(path, index=False)
        print(f"table: {path}")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    cfg = get_preset(args.preset) if args.preset else load_config(args.scenario)
    path = save_config(cfg, args.out)
    print(f"config: {path}")
    return 0


# ----------------- Parser -----------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consensus", description="Adaptive leaderless consensus of two-link arms")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write trace CSV + summary")
    p.add_argument("--scenario", required=True, help="preset name or scenario JSON file")
    p.add_argument("--out", default=None, help="output directory (default $CONSENSUS_OUT_DIR)")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", dest="t_end", type=float, default=None)
    p.add_argument("--sample-every", dest="sample_every", type=int, default=None)
    p.add_argument("--plot-script", action="store_true", help="also write a matplotlib script")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("graph-info", help="spanning tree, xi, roots and predicted equilibrium")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_graph_info)

    p = sub.add_parser("check-schedule", help="uniform joint connectivity of the schedule")
    p.add_argument("--scenario", required=True)
    p.add_argument("--window", type=float, default=None, help="window length in seconds (default: one period)")
    p.set_defaults(func=cmd_check_schedule)

    p = sub.add_parser("verify", help="run a scenario and check its acceptance thresholds")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset")
    group.add_argument("--scenario")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="integrator convergence study over a dt list")
    p.add_argument("--scenario", required=True)
    p.add_argument("--dt-list", dest="dt_list", type=float, nargs="+", required=True)
    p.add_argument("--t-end", dest="t_end", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="write a preset or scenario as a config document")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset")
    group.add_argument("--scenario")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConsensusError as e:
        logger.error(f"[CLI] {type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
