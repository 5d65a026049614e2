#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Title:        srsq.py
Description:  Command line entry point: generate populations, run simulations,
              emit figure data, tables and stability checks
Date:         2026-10-18
Version:      1.0.0
License:      MIT
"""

import os
import sys
import logging
import argparse

import numpy as np
import pandas as pd

# Add the parent directory to the Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from scripts.srsq_backend import SamplingError, SyntheticSpec, load_config
from scripts.population import generate_synthetic, write_population, describe
from scripts.experiment import SimulationRunner, write_results
from scripts.metrics import stability_check
from scripts.srsq_utils import OutputUtils, FigureUtils, TableUtils

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s - [%(filename)s:%(lineno)d]'


def cmd_gen_pop(spec_path: str, out_path: str) -> int:
    spec = SyntheticSpec.from_file(spec_path)
    frame = generate_synthetic(spec)
    directory = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(directory, exist_ok=True)
    with open(out_path, 'w', encoding='utf-8', newline='') as f:
        write_population(frame, f)
    summary = describe(frame)
    print(f"Wrote {summary['N']} schools to {out_path}")
    print(TableUtils.markdown_table(
        ['Variable', 'Mean', 'SD'],
        [[tag, TableUtils.fmt(summary['mean'][tag]), TableUtils.fmt(summary['sd'][tag])] for tag in summary['mean']]))
    print("Correlation:")
    print(np.array2string(np.asarray(summary['correlation']), precision=4, suppress_small=True))
    return 0


def cmd_simulate(config_path: str, seed=None, replications=None, jobs=None, quiet: bool = False) -> int:
    config = load_config(config_path).with_overrides(seed=seed, replications=replications, jobs=jobs)
    output_dir = config.output_dir
    results = SimulationRunner(config, progress=not quiet).run()
    write_results(results, output_dir)
    infeasible = [p.name for p in results.populations if not p.feasible]
    print(f"Simulated {len(results.populations)} populations x {len(config.permutations)} permutations x "
          f"{config.replications} replications; results in {output_dir}")
    if infeasible:
        print(f"Below the feasibility threshold: {', '.join(infeasible)}")
    if results.skipped:
        print(f"Skipped: {', '.join(s.name for s in results.skipped)}")
    return 0


def cmd_report(results_dir: str, figure: str, output=None) -> int:
    data = FigureUtils.plot_data(FigureUtils.load_metrics(results_dir), figure)
    if output:
        OutputUtils.write_csv(output, data)
        print(f"Figure data for {figure} written to {output}")
    else:
        sys.stdout.write(data.to_csv(index=False, lineterminator='\n'))
    return 0


def cmd_table(results_dir: str, population: str) -> int:
    report = OutputUtils.load_averaged(results_dir, population)
    print(TableUtils.comparison_table(report))
    print()
    print(f"Contacted {TableUtils.fmt(report.contact_increase_pct, 1)}% more schools under SRSQ; "
          f"variance accounts for {TableUtils.fmt(100 * report.variance_share_of_mse_reduction, 1)}% "
          f"of the auxiliary MSE change")
    return 0


def cmd_stability(first_dir: str, second_dir: str, population: str, output=None) -> int:
    diff = stability_check(OutputUtils.load_averaged(first_dir, population),
                           OutputUtils.load_averaged(second_dir, population))
    print(TableUtils.stability_table(diff))
    if output:
        OutputUtils.write_csv(output, pd.DataFrame(diff.to_records()))
        print(f"Stability check written to {output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Simulate stratified random sampling with and without quotas on school populations.",
        epilog="Settings in .env (SRSQ_JOBS, SRSQ_LOG_LEVEL, SRSQ_OUTPUT_DIR) apply when neither the config nor a flag sets them.")
    parser.add_argument("--log-level", default=os.getenv('SRSQ_LOG_LEVEL', 'WARNING'),
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], type=str.upper,
                        help="Logging level (default: SRSQ_LOG_LEVEL or WARNING)")
    parser.add_argument("-q", "--quiet", action="store_true", help="Hide the progress bar")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-pop", help="Generate a synthetic population CSV from a spec")
    p.add_argument("spec", help="SyntheticSpec JSON file")
    p.add_argument("out", help="Output CSV path")

    p = sub.add_parser("simulate", help="Run the simulation described by a config file")
    p.add_argument("config", help="Experiment config JSON file")
    p.add_argument("--seed", type=int, help="Override master_seed")
    p.add_argument("--replications", type=int, help="Override the number of replications")
    p.add_argument("--jobs", type=int, help="Number of worker processes")

    p = sub.add_parser("report", help="Emit plot data for one figure")
    p.add_argument("results_dir", help="Directory written by simulate")
    p.add_argument("--figure", required=True, choices=list(FigureUtils.FIGURES), help="Figure to emit")
    p.add_argument("-o", "--output", help="Output CSV path (defaults to stdout)")

    p = sub.add_parser("table", help="Markdown table of a population's averaged report")
    p.add_argument("results_dir", help="Directory written by simulate")
    p.add_argument("-p", "--population", default="national", help="Population name (default: national)")

    p = sub.add_parser("stability", help="Compare the SRSQ-SRS differences of two runs")
    p.add_argument("first_dir", help="Results of the first run")
    p.add_argument("second_dir", help="Results of the second run")
    p.add_argument("-p", "--population", default="national", help="Population name (default: national)")
    p.add_argument("-o", "--output", help="Also write the comparison as CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        if args.command == "gen-pop":
            return cmd_gen_pop(args.spec, args.out)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.seed, args.replications, args.jobs, args.quiet)
        if args.command == "report":
            return cmd_report(args.results_dir, args.figure, args.output)
        if args.command == "table":
            return cmd_table(args.results_dir, args.population)
        return cmd_stability(args.first_dir, args.second_dir, args.population, args.output)
    except SamplingError as e:
        logger.error(f"{type(e).__name__}: {e}")
    except OSError as e:
        logger.error(f"I/O error: {e}")
    print(f"{args.command} failed; see the log above", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
