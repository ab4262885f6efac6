"""Command-line entry point.

Exit status: 0 when every asserted theorem check passes, 1 on configuration
errors, 2 on numerical aborts or failed checks.
"""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, CrflabError
from .runner import (EXIT_CONFIG, EXIT_NUMERICAL, normalize_config,
                     parse_config, run_scenario)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as configuration errors."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="crflab",
                description="Normalized Chern-Ricci flow runs on elliptic "
                            "bundles over the Bolza surface")
    p.add_argument("--config", metavar="PATH",
                   help="JSON run configuration (defaults apply when omitted)")
    p.add_argument("--output", metavar="DIR",
                   help="output directory (overrides the config)")
    p.add_argument("--resume", metavar="CHECKPOINT",
                   help="resume from a .crfl checkpoint")
    p.add_argument("--dump-geometry", action="store_true",
                   help="write octagon/classification/field CSV dumps")
    p.add_argument("--mode", choices=["reduced", "full"],
                   help="override the grid mode")
    p.add_argument("--t-end", type=float, dest="t_end",
                   help="override the final time")
    p.add_argument("--seedless", action="store_true",
                   help="reserved; all runs are deterministic already")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            config = parse_config(args.config)
            raw = dict(config.normalized)
        else:
            raw = {}
            config = normalize_config(raw)
            raw = dict(config.normalized)
        if args.mode and args.mode != raw["grid"]["mode"]:
            raw["grid"] = dict(raw["grid"])
            raw["grid"]["mode"] = args.mode
            if args.mode == "full" and raw["grid"]["fiber_nx"] == 1:
                raw["grid"]["fiber_nx"] = raw["grid"]["fiber_ny"] = 16
            if args.mode == "reduced":
                raw["grid"]["fiber_nx"] = raw["grid"]["fiber_ny"] = 1
        if args.t_end is not None:
            raw["t_end"] = args.t_end
        if args.output:
            raw["output_dir"] = args.output
        config = normalize_config(raw)
        result = run_scenario(config, resume=args.resume,
                              dump_geometry=args.dump_geometry)
        if result.aborted:
            print(f"run aborted: {result.aborted}", file=sys.stderr)
        elif result.report is not None:
            for check in result.report.checks:
                flag = "PASS" if check.passed else "FAIL"
                print(f"[{flag}] {check.name}: observed {check.observed:.6g} "
                      f"(bound {check.bound})")
        return result.exit_code
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CrflabError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
