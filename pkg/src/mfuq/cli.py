"""``mfuq`` command line: one subcommand per pipeline stage plus ``speedup``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .costmodel import DEFAULT_SPEEDUP_ROWS, speedup_table, write_speedup_csv
from .errors import ConfigurationError, MFUQError
from .pipeline import STAGES, RunConfig, Run, run_stage

log = logging.getLogger("mfuq")

# flag name -> config field
OVERRIDES = {
    "seed": int, "n_sample": int, "n_train": int, "n_gamma": int, "n_gamma_plus": int,
    "n_variance": int, "bandwidth_mode": str, "family": str,
}


def _parser():
    p = argparse.ArgumentParser(prog="mfuq", description="Multi-fidelity output-density estimation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sp = sub.add_parser(stage, help=f"run the {stage} stage (and nothing upstream)")
        sp.add_argument("--config", type=Path, help="JSON run config")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--force", action="store_true", help="recompute even if artifacts are current")
        sp.add_argument("--n-sample", dest="n_sample", type=int)
        sp.add_argument("--n-train", dest="n_train", type=int)
        sp.add_argument("--n-gamma", dest="n_gamma", type=int)
        sp.add_argument("--n-gamma-plus", dest="n_gamma_plus", type=int)
        sp.add_argument("--n-variance", dest="n_variance", type=int)
        sp.add_argument("--bandwidth-mode", dest="bandwidth_mode", choices=["silverman", "cv-grid"])
        sp.add_argument("--family", help="harness family name (replaces the config model block)")
        sp.add_argument("--all", action="store_true", help="also run every upstream stage that is not current")
    sp = sub.add_parser("speedup", help="write a cost/speed-up table as CSV")
    sp.add_argument("--config", type=Path, help="JSON list of table rows (default: the 4.5/10/28 example)")
    sp.add_argument("--out", default="speedup.csv", help="CSV path, or a directory to write speedup.csv into")
    sp.add_argument("--seed", type=int, help="accepted for uniformity; unused")
    sp.add_argument("--force", action="store_true", help="accepted for uniformity; the table is always rewritten")
    return p


def build_config(args) -> RunConfig:
    """Precedence: flags > config file > defaults."""
    base = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    if args.family:
        base["model"] = {"family": args.family, "knobs": {}}
    for name in OVERRIDES:
        if name != "family" and getattr(args, name, None) is not None:
            base[name] = getattr(args, name)
    if args.out:
        base["out"] = args.out
    return RunConfig.from_dict(base)


def cmd_stage(args):
    config = build_config(args)
    run = Run(config)
    stages = STAGES[: STAGES.index(args.command) + 1] if args.all else (args.command,)
    for stage in stages:
        if args.all and stage != args.command and run.is_current(stage):
            continue
        did = run_stage(run, stage, force=args.force)
        print(f"{stage}: {'computed' if did else 'up to date'} -> {run.out}")
    return 0


def cmd_speedup(args):
    rows = json.loads(args.config.read_text()) if args.config else DEFAULT_SPEEDUP_ROWS
    if not isinstance(rows, list):
        raise ConfigurationError("speed-up config must be a JSON list of rows")
    out = Path(args.out)
    if out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        out = out / "speedup.csv"
    table = speedup_table(rows)
    write_speedup_csv(table, out)
    for r in table:
        print(f"{r['label']}: f={r['f_hf_lf']:g} speed-up={r['speedup_mf']:.2f}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("default")
    try:
        return cmd_speedup(args) if args.command == "speedup" else cmd_stage(args)
    except MFUQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
