"""Command line driver for the experiment sweeps.

    helmsplit <subcommand> --config cfg.json [--out DIR] [--jobs N] [--seed N] [--check]

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 failed
acceptance check (only with --check).
"""
import argparse
import json
import logging
import sys

from pydantic import ValidationError

from . import experiments as X
from .errors import ConfigurationError, HelmsplitError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

COMMANDS = {
    "quasiopt": X.ExperimentConfig,
    "pollution": X.ExperimentConfig,
    "relerr": X.ExperimentConfig,
    "eta": X.ExperimentConfig,
    "decompose": X.DecomposeConfig,
    "spectrum": X.SpectrumConfig,
}


def _parser():
    ap = argparse.ArgumentParser(prog="helmsplit", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    ap.add_argument("--seed", type=int, help="random seed (overrides the config)")
    ap.add_argument("--check", action="store_true", help="exit 4 if an acceptance check fails")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_config(command, path, out=None, seed=None):
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigurationError("the configuration must be a JSON object")
    if out is not None:
        raw["out"] = out
    if seed is not None:
        raw["seed"] = seed
    return COMMANDS[command].model_validate(raw)


def _plots_for(command, records, summary):
    def xy(recs, attr):
        return [r.k for r in recs], [getattr(r, attr) for r in recs]

    if command == "quasiopt":
        return {"ratio": xy(records, "ratio"), "rel_err": xy(records, "rel_err")}
    if command == "pollution":
        n = len(records) // 2
        return {"fixed_hk": xy(records[:n], "rel_err"), "h2k3": xy(records[n:], "rel_err")}
    if command == "relerr":
        return {"rel_err": xy(records, "rel_err")}
    if command == "eta":
        return {"k_eta": ([r.k for r in records], [r.k * r.eta for r in records]),
                "eta_h": ([r.h for r in records], [r.eta for r in records])}
    return {}


def run(command, config, jobs=1):
    """Run one subcommand; returns (records or None, summary, plots)."""
    if command == "decompose":
        rows, summary = X.run_decompose_sweep(config)
        plots = {"u_H2": ([r["k"] for r in rows], [r["L2_u_H2"] for r in rows]),
                 "u_A": ([r["k"] for r in rows], [r["L2_u_A"] for r in rows])}
        return None, summary, plots
    if command == "spectrum":
        summary, plots = X.run_spectrum(config)
        return None, summary, plots
    sweep = {"quasiopt": X.run_quasiopt_sweep, "pollution": X.run_pollution_demo,
             "relerr": X.run_relative_error, "eta": X.run_eta_sweep}[command]
    records, summary = sweep(config, jobs)
    summary["wall_time"] = [r.wall_time for r in records]
    return records, summary, _plots_for(command, records, summary)


def _write_decompose_rows(path, rows):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(X.DECOMPOSE_FIELDS)
        for row in rows:
            w.writerow([X._fmt(row[name]) for name in X.DECOMPOSE_FIELDS])


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.command, args.config, args.out, args.seed)
    except (OSError, json.JSONDecodeError, ValidationError, ConfigurationError) as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("configuration error: --jobs must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        records, summary, plots = run(args.command, config, args.jobs)
    except ConfigurationError as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except (HelmsplitError, ArithmeticError, MemoryError) as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return EXIT_SOLVER
    out = config.out or "helmsplit-%s" % args.command
    X.write_outputs(out, records, summary, plots)
    if args.command == "decompose":
        _write_decompose_rows(X.Path(out) / "records.csv", summary["rows"])
    checks = summary.get("checks", {})
    for name, ok in sorted(checks.items()):
        print("%s %s" % ("PASS" if ok else "FAIL", name))
    if args.check and not all(checks.values()):
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
