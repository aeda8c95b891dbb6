"""Command-line entry point: ``fracflat <subcommand> [--config FILE] [--seed N] ...``.

Exit codes: 0 when every check of the experiment passes, 1 when one fails,
2 on an invalid configuration or a refused overwrite.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import ConfigError
from .calibration import calibrate, write_calibration
from .config import SUBCOMMAND_KIND, load_config, validate

log = logging.getLogger("fracflat")


def _parser():
    p = argparse.ArgumentParser(prog="fracflat", description="Fractional kernels, nonlocal curvature and "
                                                             "flatness experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"kernel": "closed-form kernel against time quadrature", "heat": "numeric heat kernel",
             "nmc": "nonlocal mean curvature at boundary points", "perimeter": "fractional perimeter on the line",
             "flatness": "dyadic flatness report of a graph", "solve": "s-minimal graph by curvature flow",
             "verify": "solve, then check curvature bound, flatness and the dichotomy",
             "calibrate": "fit the constants of a metric family"}
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", type=Path, help="JSON config (defaults are used for missing fields)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory (calibrate: output file)")
        sp.add_argument("--jobs", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "calibrate":
            sp.add_argument("--force", action="store_true", help="overwrite an existing calibration file")
        else:
            sp.add_argument("--calibration", default=None, help="calibration file (default: packaged)")
    return p


def _calibrate(args):
    family = json.loads(args.config.read_text()) if args.config else None
    if family is not None and not isinstance(family, dict):
        raise ConfigError("config: a calibration config must be a mapping of family fields")
    seed = 0 if args.seed is None else args.seed
    jobs = 1 if args.jobs is None else args.jobs
    if jobs < 1:
        raise ConfigError("jobs: must be a positive integer")
    out = Path(args.out or "calibration.json")
    if out.exists() and not args.force:
        print(f"error: {out} exists; pass --force to overwrite", file=sys.stderr)
        return 2
    cal = calibrate(family, seed=seed, jobs=jobs)
    write_calibration(cal, out, force=True)
    print(f"calibration {cal['version']} written to {out}")
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "calibrate":
            return _calibrate(args)
        from .run import run

        kind = SUBCOMMAND_KIND[args.command]
        kw = {"kind": kind, "seed": args.seed, "out": args.out, "jobs": args.jobs, "calibration": args.calibration}
        cfg = load_config(args.config, **kw) if args.config else validate(None, **kw)
        code, path = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"{'PASS' if code == 0 else 'FAIL'} {args.command}: {path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
