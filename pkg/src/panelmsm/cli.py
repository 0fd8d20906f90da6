"""Command-line front end.

Subcommands mirror the library stages: simulate writes a synthetic panel,
fit runs the weighted estimation pipeline, balance/sensitivity/positivity
add their diagnostic passes, and all runs everything. Config problems and
bad invocations exit 2; data or estimation failures exit 1.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, DroppedGroupWarning, PanelmsmError
from .pipeline import config_from_json, load_panel, run_pipeline
from .simulate import generate_panel, oracle_truth, preset


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--data", help="panel CSV (overrides data.path in the config)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--b", type=int, help="bootstrap replicates override")
    p.add_argument("--seed", type=int, help="inference seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelmsm",
        description=(
            "Marginal structural models for panel data with stabilized "
            "windowed treatment weights"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic panel CSV")
    sim.add_argument(
        "--preset",
        required=True,
        choices=["null", "confounded-hard", "realism", "positivity-violation"],
    )
    sim.add_argument("--out", required=True, help="output CSV path")
    sim.add_argument("--seed", type=int, help="generator seed override")
    sim.add_argument("--n-units", type=int, help="number of units override")
    sim.add_argument("--n-periods", type=int, help="number of periods override")
    sim.add_argument(
        "--truth",
        action="store_true",
        help="also print the true incremental effect of current treatment",
    )

    for name, help_text in [
        ("fit", "estimate the weighted treatment effect"),
        ("balance", "estimate and report covariate balance"),
        ("sensitivity", "estimate and sweep the selection-bias correction"),
        ("positivity", "estimate and resimulate to check practical positivity"),
        ("all", "run estimation plus every diagnostic pass"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_run_options(p)

    return parser


def _cmd_simulate(args: argparse.Namespace) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_units is not None:
        overrides["n_units"] = args.n_units
    if args.n_periods is not None:
        overrides["n_periods"] = args.n_periods
    cfg = preset(args.preset, **overrides)
    d = generate_panel(cfg)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    d.frame.to_csv(out, index=False, lineterminator="\n")
    print(f"wrote {d.n_rows} rows ({d.n_units} units) to {out}")
    if args.truth:
        truth = oracle_truth(cfg, target="current")
        print(f"true incremental effect (current treatment): {truth:.6g}")
    return 0


def _cmd_run(args: argparse.Namespace, command: str) -> int:
    cfg = config_from_json(args.config)
    if args.b is not None:
        cfg = replace(cfg, bootstrap_b=args.b)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data_path = args.data or cfg.data_path
    if not data_path:
        raise ConfigError(
            "no panel data given: set data.path in the config or pass --data"
        )
    d = load_panel(data_path, cfg.roles)
    arts = run_pipeline(
        cfg,
        d,
        args.out,
        sensitivity=command in ("sensitivity", "all"),
        positivity=command in ("positivity", "all"),
    )
    e = arts.effect
    print(
        f"{e.name}: coefficient={e.coefficient:.6g} se={e.se:.6g} "
        f"ci=[{e.ci_low:.6g}, {e.ci_high:.6g}] p={e.p_value:.4g}"
    )
    if command == "balance":
        print(arts.balance.to_frame().to_string(index=False))
    out = Path(args.out)
    if command in ("sensitivity", "all"):
        print(f"sensitivity curve written to {out / 'sensitivity.csv'}")
    if command in ("positivity", "all"):
        print((out / "positivity.txt").read_text().rstrip())
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        # run.log records dropped-group counts per treatment model; the
        # per-fit warning repeats for every bootstrap replicate otherwise.
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DroppedGroupWarning)
            if args.command == "simulate":
                return _cmd_simulate(args)
            return _cmd_run(args, args.command)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PanelmsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
