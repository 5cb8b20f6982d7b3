"""
Command-line front end.

Usage:
    nanonmr simulate-xy8 --config configs/simulate_xy8.ini --out run/
    nanonmr fit --config configs/fit_xy8_single.ini --out run/ --format json
    nanonmr simulate-correlation --config configs/simulate_correlation.ini --seed 7 --out run/

Every subcommand writes ``report.json`` into ``--out``; with
``--format csv`` (default) its tables go to CSV files next to it, with
``--format json`` they are embedded in the report.  Failures print a JSON
error document on stderr and exit with 2 (config), 3 (data) or 4 (fit
did not converge).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import __version__
from ..core import DomainError
from .commands import COMMANDS
from .config import ConfigError, ConvergenceError, DataError, load_config
from .io import build_report, to_jsonable, write_report, write_table

__all__ = ["main", "build_parser"]

_HELP = {
    "simulate-xy8": "coherence of an XY8-k sweep for nuclear layers or given RMS fields",
    "fit": "fit an XY8 sweep (xy8_single or xy8_dual) and derive depth",
    "calibrate": "depth (and layer thickness) from measured RMS fields",
    "sensitivity": "sensitivity budget over tau and single-spin thresholds over depth",
    "volume-map": "per-voxel signal map and detection volume",
    "simulate-correlation": "correlation-spectroscopy trace and its spectrum",
    "fit-correlation": "fit two damped cosines to a correlation trace",
    "fit-relaxation": "joint fit of nine population curves to a three-level rate model",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="nanonmr", description="Nanoscale NMR analysis with shallow spin sensors.")
    parser.add_argument("--version", action="version", version=f"nanonmr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in _HELP.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="INI file with a [%s] section" % name)
        p.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
        p.add_argument("--format", choices=("csv", "json"), default="csv", help="table format (default: csv)")
    return parser


def _error(command, code, kind, message):
    doc = {"error": {"type": kind, "code": code, "message": message}, "command": command}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def run(args) -> int:
    command = args.command
    try:
        cfg = load_config(command, args.config, args.seed)
        results, tables = COMMANDS[command](cfg)
    except ConfigError as err:
        return _error(command, 2, "config", str(err))
    except DomainError as err:
        return _error(command, 2, "config", str(err))
    except DataError as err:
        return _error(command, 3, "data", str(err))
    except ConvergenceError as err:
        return _error(command, 4, "convergence", str(err))

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    comments = [f"nanonmr {__version__} {command}", f"seed={cfg.seed}", f"config_digest={cfg.digest}"]
    outputs = []
    if args.format == "csv":
        for name, header, cols in tables:
            write_table(out / name, header, cols, comments)
            outputs.append(name)
    else:
        results = dict(results)
        results["tables"] = {name: {h: to_jsonable(list(c)) for h, c in zip(header, cols)} for name, header, cols in tables}
    report = build_report(cfg, results, outputs)
    write_report(out / "report.json", report)
    print(f"{command}: wrote {', '.join(outputs + ['report.json'])} to {out}")
    if results.get("converged") is False:
        return _error(command, 4, "convergence", "fit stopped before meeting the convergence criteria")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args)
