"""Command-line entry point: ``isac-chest <command> ...``.

Environment
-----------
ISAC_OUTPUT_DIR
    Directory for CSV outputs when ``-o`` is not given (default: current
    directory).
ISAC_THREADS
    Worker processes for Monte-Carlo trials (default: 1).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from ..estimators import NumericalError
from ..grid import ConfigurationError
from . import runner
from .scenario import describe_presets, load_scenario, preset


def _scenario(args):
    if args.preset:
        scn = preset(args.preset, args.scale or "small")
    elif args.scenario:
        scn = load_scenario(args.scenario)
        if args.scale:
            scn = scn.with_scale(args.scale)
    else:
        raise ConfigurationError("give a scenario file or --preset")
    return scn


def _out(args, scn, suffix):
    if args.output:
        return args.output
    return os.path.join(runner.output_dir(), f"{scn.id}_{suffix}.csv")


def _emit(args, scn, suffix, rows, columns):
    path = _out(args, scn, suffix)
    if path == "-":
        sys.stdout.write(runner.rows_to_csv(rows, columns))
    else:
        runner.write_csv(path, rows, columns)
        print(path)


def cmd_simulate(args):
    scn = _scenario(args)
    rows = runner.sweep(scn, args.workers)
    _emit(args, scn, "simulate", rows, runner.CSV_COLUMNS)


def cmd_rdmap(args):
    scn = _scenario(args)
    rows = runner.rdmap_rows(scn, args.snr, args.trial)
    _emit(args, scn, "rdmap", rows, ("delay_bin", "doppler_bin", "delay_s", "doppler_hz", "power"))


def cmd_analyze(args):
    scn = _scenario(args)
    rows = runner.analyze_rows(scn)
    _emit(args, scn, "analyze", rows, ("schema_version", "scenario_id", "estimator", "snr_db",
                                       "nmse_psd", "nmse_high_snr_2d", "area_1d", "area_2d",
                                       "ratio_1d_2d"))


def cmd_complexity(args):
    scn = _scenario(args)
    rows = runner.complexity_rows(scn, args.k)
    _emit(args, scn, "complexity", rows, ("schema_version", "scenario_id", "mode", "accounting", "update", "k",
                                          "build", "apply", "sensing", "estimation", "total"))


def cmd_presets(args):
    rows = describe_presets()
    sys.stdout.write(runner.rows_to_csv(rows, ("name", "num_paths", "powers_db", "delays_ns",
                                               "dopplers_khz")))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isac-chest",
                                description="Sensing-assisted OFDM channel estimation experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log estimator failures")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", nargs="?", help="YAML scenario file")
        sp.add_argument("--preset", help="built-in scenario instead of a file")
        sp.add_argument("--scale", choices=("small", "full"),
                        help="small: N=256, 256-point FFTs; full: N=1584, 1024-point FFTs")
        sp.add_argument("-o", "--output", help="output CSV path ('-' for stdout)")

    sp = sub.add_parser("simulate", help="Monte-Carlo sweep to CSV")
    common(sp)
    sp.add_argument("--workers", type=int, default=None,
                    help="worker processes (default: $ISAC_THREADS or 1)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("rdmap", help="dump one range-Doppler map")
    common(sp)
    sp.add_argument("--snr", type=float, default=None, help="SNR in dB (default: last grid point)")
    sp.add_argument("--trial", type=int, default=0)
    sp.set_defaults(func=cmd_rdmap)

    sp = sub.add_parser("analyze", help="closed-form NMSE predictions")
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("complexity", help="complex-multiplication counts")
    common(sp)
    sp.add_argument("--k", type=float, default=1.0, help="matrix-inversion constant")
    sp.set_defaults(func=cmd_complexity)

    sp = sub.add_parser("presets", help="list built-in scenarios")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigurationError, NumericalError, MemoryError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
