"""Command line entry point: ``irsce run | phase-opt | selftest``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import ConfigError, load_config
from .harness import build_scenario, format_csv, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irsce", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a Monte-Carlo NMSE sweep and write CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="CSV path (default: the config's output key)")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int)
    ph = sub.add_parser("phase-opt", help="print the optimised steering vector as CSV")
    ph.add_argument("--config", required=True)
    sub.add_parser("selftest", help="run the built-in invariant checks")
    return p


def _phase_opt_csv(config) -> str:
    res = build_scenario(config).steering
    lines = ["n,re,im,angle_rad"]
    for n, v in enumerate(res.vartheta):
        lines.append(f"{n},{v.real:.17g},{v.imag:.17g},{np.angle(v):.17g}")
    lines += ["", "iteration,f_B"]
    lines += [f"{i},{f:.17g}" for i, f in enumerate(res.trajectory)]
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            from .selftest import run_selftest

            return EXIT_OK if run_selftest() else EXIT_RUNTIME
        overrides = {}
        if args.command == "run":
            overrides = {"seed": args.seed, "threads": args.threads}
        config = load_config(args.config, **overrides)
        if args.command == "phase-opt":
            sys.stdout.write(_phase_opt_csv(config))
            return EXIT_OK
        out = args.out or config.output
        rows = run_experiment(config, out_path=out)
        sys.stdout.write(format_csv(rows, config.include_timing))
        failed = sum(r.failed for r in rows)
        if failed:
            print(f"warning: {failed} trials failed and were excluded", file=sys.stderr)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure maps to the runtime exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
