"""Command-line interface.

Subcommands:
  estimate   snapshot CSV -> spectrum and refined DOA estimates
  synth      scenario JSON -> synthesized snapshot CSV
  bench      experiment JSON -> aggregated accuracy report
  outliers   outlier-sensitivity study (defaults match the standard setup)
  kstest     total-noise Gaussianity validation table

Angles are degrees on this boundary; SNR accepts "inf".
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .arraymodel import Grid, UlaConfig, build_dictionary
from .backend import default_backend_name
from .harness import ExperimentSpec, report_write, run_experiment
from .inference import InferenceConfig, run_ogsbi
from .scenario import load_scenario, parse_snr, read_snapshots, synthesize, write_snapshots
from .spectrum import estimate_powers, extract_doas, write_spectrum_csv
from .svdreduce import run_ogsbi_svd


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="output file path")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--seed", type=int, help="base RNG seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ogdoa", description="Off-grid sparse Bayesian DOA estimation"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate DOAs from a snapshot CSV")
    est.add_argument("snapshots", help="snapshot CSV (one row per sensor, re/im interleaved)")
    est.add_argument("--sources", type=int, required=True, help="number of sources K")
    est.add_argument("--grid-deg", type=float, default=2.0, help="grid interval in degrees")
    est.add_argument("--algo", choices=("ogsbi", "ogsbi-svd"), default="ogsbi-svd")
    _add_common(est)

    synth = sub.add_parser("synth", help="synthesize snapshots from a scenario JSON")
    synth.add_argument("--spec", required=True, help="scenario JSON file")
    synth.add_argument("--snr-db", help='override scenario SNR (number or "inf")')
    synth.add_argument("--snapshots", type=int, help="override snapshot count T")
    _add_common(synth)

    bench = sub.add_parser("bench", help="run an experiment spec")
    bench.add_argument("--spec", required=True, help="experiment JSON file")
    bench.add_argument("--trials", type=int, help="override trial count R")
    bench.add_argument("--workers", type=int, help="override worker count")
    bench.add_argument("--algo", choices=("ogsbi", "ogsbi-svd"), help="override algorithm")
    _add_common(bench)

    outl = sub.add_parser("outliers", help="outlier-sensitivity study")
    outl.add_argument("--spec", help="experiment JSON file (optional)")
    outl.add_argument("--trials", type=int, default=200)
    outl.add_argument("--grid-deg", type=float, default=2.0)
    outl.add_argument("--snapshots", type=int, default=200)
    outl.add_argument("--workers", type=int, default=1)
    _add_common(outl)

    ks = sub.add_parser("kstest", help="total-noise Gaussianity validation")
    ks.add_argument("--spec", help="experiment JSON file (optional)")
    ks.add_argument("--trials", type=int, default=200)
    ks.add_argument("--snapshots", type=int, default=200)
    ks.add_argument("--workers", type=int, default=1)
    _add_common(ks)

    return parser


def _cmd_estimate(args) -> int:
    y = read_snapshots(args.snapshots)
    ula = UlaConfig(y.shape[0])
    dictionary = build_dictionary(Grid.from_interval_deg(args.grid_deg), ula)
    config = InferenceConfig(sources=args.sources)
    if args.algo == "ogsbi-svd":
        result = run_ogsbi_svd(y, dictionary, config)
    else:
        result = run_ogsbi(y, dictionary, config)
    spec = estimate_powers(result.posterior, dictionary.grid, result.state.beta, y.shape[1])
    estimate = extract_doas(spec, args.sources)
    doas_deg = np.rad2deg(estimate.angles)
    print(f"backend: {default_backend_name()}")
    print(f"iterations: {len(result.trace)} converged: {result.trace.converged}")
    print("doas_deg: " + ", ".join(f"{v:.4f}" for v in doas_deg))
    if args.out:
        if args.format == "csv":
            write_spectrum_csv(args.out, spec)
        else:
            payload = {
                "doas_deg": [float(v) for v in doas_deg],
                "peak_indices": [int(v) for v in estimate.peak_indices],
                "peak_powers": [float(v) for v in estimate.peak_powers],
                "grid_deg": [float(v) for v in np.rad2deg(spec.grid_angles)],
                "power": [float(v) for v in spec.powers],
                "beta_deg": [float(v) for v in np.rad2deg(spec.offsets)],
            }
            with open(args.out, "w") as fh:
                json.dump(payload, fh, indent=2)
                fh.write("\n")
        print(f"wrote {args.out}")
    return 0


def _cmd_synth(args) -> int:
    with open(args.spec) as fh:
        mapping = json.load(fh)
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.snr_db is not None:
        mapping["snr_db"] = parse_snr(args.snr_db)
    if args.snapshots is not None:
        mapping["T"] = args.snapshots
    scenario = load_scenario(mapping)
    sensors = int(mapping.get("sensors", 8))
    data = synthesize(scenario, UlaConfig(sensors))
    print("true_doas_deg: " + ", ".join(f"{math.degrees(v):.4f}" for v in scenario.doas))
    out = args.out or "snapshots.csv"
    write_snapshots(out, data.Y)
    print(f"wrote {out} ({data.Y.shape[0]} sensors x {data.Y.shape[1]} snapshots)")
    return 0


def _print_report(report) -> None:
    columns = report.columns
    print("\t".join(columns))
    for entry in report.cells:
        print("\t".join(str(entry[c]) for c in columns))


def _finish_report(report, args) -> int:
    _print_report(report)
    if args.out:
        report_write(report, args.out, format=args.format)
        print(f"wrote {args.out}")
    return 0


def _cmd_bench(args) -> int:
    with open(args.spec) as fh:
        mapping = json.load(fh)
    overrides = (
        ("trials", args.trials), ("seed", args.seed),
        ("workers", args.workers), ("algo", args.algo),
    )
    for key, value in overrides:
        if value is not None:
            mapping[key] = value
    spec = ExperimentSpec.from_mapping(mapping)
    return _finish_report(run_experiment(spec), args)


def _cmd_outliers(args) -> int:
    if args.spec:
        with open(args.spec) as fh:
            mapping = json.load(fh)
    else:
        mapping = {
            "kind": "outlier_study",
            "r_deg": [args.grid_deg],
            "snr_db": ["inf"],
            "trials": args.trials,
            "snapshots": args.snapshots,
            "sources": 2,
            "intervals_deg": [[58.0, 62.0], [86.0, 90.0]],
            "kappas": [1, 5, 10, 20, 50, 100],
            "outlier_count": 3,
            "workers": args.workers,
        }
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.trials is not None:
        mapping["trials"] = args.trials
    spec = ExperimentSpec.from_mapping(mapping)
    return _finish_report(run_experiment(spec), args)


def _cmd_kstest(args) -> int:
    if args.spec:
        with open(args.spec) as fh:
            mapping = json.load(fh)
    else:
        mapping = {
            "kind": "ks_validation",
            "r_deg": [0.5, 1.0, 2.0, 4.0],
            "snr_db": [0.0, 10.0],
            "trials": args.trials,
            "snapshots": args.snapshots,
            "sources": 2,
            "intervals_deg": [[58.0, 62.0], [86.0, 90.0]],
            "workers": args.workers,
        }
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.trials is not None:
        mapping["trials"] = args.trials
    spec = ExperimentSpec.from_mapping(mapping)
    return _finish_report(run_experiment(spec), args)


_COMMANDS = {
    "estimate": _cmd_estimate,
    "synth": _cmd_synth,
    "bench": _cmd_bench,
    "outliers": _cmd_outliers,
    "kstest": _cmd_kstest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
