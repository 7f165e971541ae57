# CLI runner for HD routing experiments
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from hdroute import experiment
from hdroute.config import resolve
from hdroute.graph import calibrate_ce, write_edge_list
from hdroute.routing import export_next_hops
from hdroute.traffic import InvariantViolation

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVARIANT = 2

RUNNERS = {
    "train": experiment.run_training,
    "sweep": experiment.run_capacity_sweep,
    "census": experiment.run_action_census,
    "resilience": experiment.run_resilience,
    "report": experiment.run_distribution_report,
    "degeneracy": experiment.run_degeneracy,
}


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Scenario YAML file")
    common.add_argument("--seed", type=int, help="Traffic/agent seed (replaces the seeds list)")
    common.add_argument("--out-dir", help="Output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any config key (repeatable)")
    common.add_argument("--log-level", default="WARNING", help="Logging level (DEBUG, INFO, WARNING, ...)")

    parser = argparse.ArgumentParser(prog="hdroute", description="Hierarchical dynamic routing simulator")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-graph", parents=[common], help="Generate a network and write its edge list")
    gen.add_argument("--out", dest="output", help="Edge-list path (default <out-dir>/network.edges)")

    commands.add_parser("stats", parents=[common], help="Print the degree statistics row as CSV")

    bc = commands.add_parser("bc", parents=[common], help="Write normalized betweenness per node")
    bc.add_argument("--out", dest="output", help="CSV path (default <out-dir>/bc.csv)")

    routes = commands.add_parser("routes", help="Routing table utilities")
    route_commands = routes.add_subparsers(dest="routes_command", required=True)
    export = route_commands.add_parser("export", parents=[common], help="Export one next-hop table")
    which = export.add_mutually_exclusive_group(required=True)
    which.add_argument("--beta", type=float, help="Beta of the bypass table")
    which.add_argument("--ld", action="store_true", help="Export the least-degree table")
    export.add_argument("--out", dest="output", help="CSV path (default <out-dir>/next_hops.csv)")

    calibrate = commands.add_parser("calibrate-ce", parents=[common], help="Grid-search CE parameters")
    calibrate.add_argument("--target-mean", type=float, required=True, help="Target mean degree")
    calibrate.add_argument("--target-h", type=float, required=True, help="Target heterogeneity H")
    calibrate.add_argument("--target-rsd", type=float, help="Optional target relative standard deviation")
    calibrate.add_argument("--a-grid", type=_float_list, required=True, help="Comma-separated a values")
    calibrate.add_argument("--lam-grid", type=_float_list, required=True, help="Comma-separated lambda values")

    for name, help_text in (
        ("train", "Train HD agents for one cell and save checkpoints"),
        ("sweep", "Capacity sweep: eta over the R/N grid and R_c"),
        ("census", "Action census: P(beta) per agent and R/N"),
        ("resilience", "Link-removal experiment"),
        ("report", "Travel-time and loss-by-BC reports"),
        ("degeneracy", "Mean BC along beta-bypasses of the top nodes"),
    ):
        commands.add_parser(name, parents=[common], help=help_text)
    return parser


def _resolve(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seeds=[{args.seed}]")
    config = resolve(args.config, overrides)
    # taken verbatim: a directory name is never parsed as YAML
    if args.out_dir is not None:
        config = replace(config, out_dir=args.out_dir)
    return config


def _gen_graph(config, args) -> dict:
    net = experiment.build_network_from_config(config, config.network_seeds[0])
    output = Path(args.output) if args.output else Path(config.out_dir) / "network.edges"
    output.parent.mkdir(parents=True, exist_ok=True)
    write_edge_list(net, output)
    return {"output": str(output), "nodes": net.node_count, "links": net.edge_count}


def _bc(config, args) -> dict:
    net = experiment.build_network_from_config(config, config.network_seeds[0])
    frame = pd.DataFrame({
        "node": np.arange(net.node_count),
        "label": net.labels,
        "degree": net.degrees,
        "bc": net.bc,
    })
    output = Path(args.output) if args.output else Path(config.out_dir) / "bc.csv"
    experiment.write_csv(frame, output, config, [config.network_seeds[0]])
    return {"output": str(output), "max_bc": float(net.bc.max())}


def _routes_export(config, args) -> dict:
    tables = experiment.prepare(config, config.network_seeds[0])
    output = Path(args.output) if args.output else Path(config.out_dir) / "next_hops.csv"
    frame = export_next_hops(tables, beta=None if args.ld else args.beta)
    experiment.write_csv(frame, output, config, [config.network_seeds[0]])
    return {"output": str(output), "rows": len(frame)}


def _stats(config, args) -> None:
    frame = experiment.run_stats(config)
    sys.stdout.write(experiment.format_csv(frame, config, config.network_seeds))


def _calibrate(config, args) -> dict:
    frame = calibrate_ce(
        config.ce_j,
        args.target_mean,
        args.target_h,
        args.a_grid,
        args.lam_grid,
        n=config.n,
        seeds=config.network_seeds,
        kmin=config.ce_kmin,
        target_rsd=args.target_rsd,
    )
    output = Path(config.out_dir) / "calibration.csv"
    experiment.write_csv(frame, output, config, config.network_seeds)
    best = frame.iloc[0]
    return {"output": str(output), "ce_a": float(best["a"]), "ce_lambda": float(best["lam"]),
            "mean_degree": float(best["mean_degree"]), "H": float(best["H"]), "rsd": float(best["rsd"])}


def _run(config, args) -> dict:
    result = RUNNERS[args.command](config)
    rows = len(result.rows) if isinstance(result, experiment.SweepResult) else len(result)
    return {"out_dir": config.out_dir, "rows": rows}


def main(argv=None):
    """
    Main CLI entry point.

    Returns:
        int: Exit code
            0 - Success
            1 - Configuration, input or parameter error
            2 - Runtime invariant violation
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits with 0; usage errors are input errors
        return EXIT_OK if e.code in (0, None) else EXIT_ERROR
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    try:
        config = _resolve(args)
        if args.command == "stats":
            _stats(config, args)
            return EXIT_OK
        if args.command == "gen-graph":
            summary = _gen_graph(config, args)
        elif args.command == "bc":
            summary = _bc(config, args)
        elif args.command == "routes":
            summary = _routes_export(config, args)
        elif args.command == "calibrate-ce":
            summary = _calibrate(config, args)
        else:
            summary = _run(config, args)

        print(json.dumps({"command": args.command, "config_hash": config.config_hash, **summary}))
        return EXIT_OK

    except InvariantViolation as e:
        logger.error("invariant violated: %s", e)
        return EXIT_INVARIANT
    except Exception as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR


def run():
    sys.exit(main())


if __name__ == '__main__':
    run()
