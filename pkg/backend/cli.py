"""
Command-line drivers for the qsense experiments.

    python qsense.py sweep-phi --seed 7 --reps 50 --out sweep_phi.csv
    python qsense.py fit sweep_phi.csv

Exit codes: 0 ok, 1 validation or fit failure, 2 configuration error.
"""
import argparse
import os
import sys
from typing import List, Optional

import experiment_manager
from config import build_experiment_config, configure_logging, read_config_file
from errors import ConfigError, CsvVersionError, QSenseError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

RUN_HELP = {
    "theory-fig1d": "Fisher information per detected photon against RBW",
    "sweep-phi": "measured quantum advantage against squeezing at fixed RBW",
    "sweep-rbw": "measured quantum advantage against RBW, with the classical-noise fit",
    "trace-fig2a": "squeezed and antisqueezed spectra around the sideband",
    "simulate": "free-form frequency-domain Monte Carlo run",
    "validate": "invariant suite with per-check margins",
}


def _parse_set(items):
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsense",
        description="Squeezed-light amplitude-modulation precision experiments.",
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default from QSENSE_LOG_LEVEL).")
    sub = parser.add_subparsers(dest="command", required=True)

    for kind, help_text in RUN_HELP.items():
        p = sub.add_parser(kind, help=help_text)
        p.add_argument("--config", help="Flat key=value parameter file.")
        p.add_argument("--seed", type=int, default=None, help="Unsigned 64-bit seed (required here or in the file).")
        p.add_argument("--out", default=None, help="Output CSV path (default: stdout).")
        p.add_argument("--reps", type=int, default=None, help="Variance measurements per point.")
        p.add_argument("--threads", type=int, default=None, help="Worker threads.")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one parameter key.")

    p = sub.add_parser("fit", help="fit a sweep-phi or sweep-rbw CSV")
    p.add_argument("csv", help="CSV written by sweep-phi or sweep-rbw.")
    p.add_argument("--out", default=None, help="Output CSV path (default: stdout).")
    return parser


def _emit(output, out):
    if out:
        output.write_csv(out)
        print(f"Saved: {out}", file=sys.stderr)
    else:
        output.write_csv(sys.stdout)


def _print_checks(frame):
    for row in frame.itertuples(index=False):
        status = "PASS" if row.passed else "FAIL"
        print(f"{status}  {row.check:<45} value={row.value:.6g} target={row.target:.6g} "
              f"margin={row.margin:.3f}", file=sys.stderr)


def run_command(args) -> int:
    if args.command == "fit":
        if not os.path.exists(args.csv):
            raise ConfigError(f"CSV file not found: {args.csv}")
        output = experiment_manager.run_fit(args.csv)
        print(output.fit.to_json(), file=sys.stderr)
        _emit(output, args.out)
        return EXIT_OK

    file_values = read_config_file(args.config) if args.config else None
    cfg = build_experiment_config(
        args.command,
        file_values=file_values,
        overrides=_parse_set(args.set),
        seed=args.seed,
        reps=args.reps,
        threads=args.threads,
        output=args.out,
    )
    output = experiment_manager.run(cfg)
    if output.fit is not None:
        print(output.fit.to_json(), file=sys.stderr)
    if output.passed is not None:
        _print_checks(output.frame)
    _emit(output, args.out)
    if output.passed is False:
        print("validation FAILED", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return run_command(args)
    except (ConfigError, CsvVersionError) as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except QSenseError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
