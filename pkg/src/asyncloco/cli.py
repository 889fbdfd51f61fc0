"""Command line: ``asyncloco run|sweep|validate``."""
from __future__ import annotations

import argparse
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .experiment import AXES, run, sweep, validate_equivalences


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="asyncloco", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its metrics CSV")
    p.add_argument("--config", help="key=value config file (defaults if omitted)")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("sweep", help="run one experiment per value of an axis")
    p.add_argument("--config")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1, help="cells run in parallel")

    p = sub.add_parser("validate", help="run the built-in equivalence checks")
    p.add_argument("--perturb-beta", type=float, default=0.0, help=argparse.SUPPRESS)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run(_config(args.config), args.out)
        if args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            cells = sweep(_config(args.config), args.axis, values, args.out_dir, args.jobs)
            failed = [c for c in cells if c.status != "ok"]
            for c in cells:
                loss = f"{c.row.eval_loss:.6f}" if c.row is not None else "-"
                print(f"{c.axis}={c.value}\t{c.status}\tfinal eval_loss {loss}")
            return 1 if failed else 0
        checks = validate_equivalences(args.perturb_beta)
        return 0 if all(c.passed for c in checks) else 1
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
