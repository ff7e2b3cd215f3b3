"""Command line front end.

    pgflow run <config> [--out DIR] [--seeds a,b,c]
    pgflow plot <run-dir>
    pgflow theory <run-dir>
    pgflow sweep <config> --param lambda --values 1,5,15,30 [--out DIR]
    pgflow compare <run-dir>... [--metric reward]

Every command is deterministic given its inputs; errors exit nonzero with a
one-line message on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config, with_overrides
from .harness import HarnessError, format_comparison, run_experiment
from .plots import PlotError, render_run_plots, render_sweep_plots
from .pmeta import read_rounds_csv
from .theory import convergence_trace_report, write_convergence_csv

# sweep names accepted on the command line -> config fields
SWEEPABLE = {
    "lambda": "lam",
    "lam": "lam",
    "beta": "beta",
    "eta": "eta",
    "inner_lr": "inner_lr",
    "delta": "delta",
    "explore_eps": "explore_eps",
}


def _parse_seeds(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(","))
    except ValueError:
        raise ConfigError(f"bad seed list {raw!r}") from None


def _cmd_run(args) -> int:
    config = load_config(args.config)
    seeds = _parse_seeds(args.seeds) if args.seeds else None
    out = args.out if args.out else Path(args.config).stem + "_run"
    run_experiment(config, out, seeds=seeds)
    print(out)
    return 0


def _cmd_plot(args) -> int:
    run = Path(args.run_dir)
    if (run / "sweep.json").exists():
        paths = render_sweep_plots(run)
    else:
        paths = render_run_plots(run)
    for p in paths:
        print(p)
    return 0


def _cmd_theory(args) -> int:
    run = Path(args.run_dir)
    reports = sorted((run / "theory").glob("seed*.json")) if (run / "theory").is_dir() else []
    rounds_csvs = sorted(run.glob("traces/seed*_pgflowmeta_rounds.csv"))
    if not reports and not rounds_csvs:
        raise HarnessError("theory", ValueError(f"{run} has no personalized-run artifacts"))
    for path in reports:
        payload = json.loads(path.read_text())
        print(f"{path.name}: L_ell={payload['l_ell']:.4g} "
              f"lambda={payload['lam']:.4g} "
              f"lambda>L_ell={payload['lambda_exceeds_l_ell']} "
              f"zeta_sq={payload['zeta_sq']} "
              f"eta_theory={payload['eta_theory']:.4g}")
    for path in rounds_csvs:
        records = read_rounds_csv(path)
        report = convergence_trace_report(records)
        out_csv = run / "theory" / (path.stem.replace("_rounds", "") + "_convergence.csv")
        write_convergence_csv(out_csv, report)
        print(f"{path.name}: runmin[{report.rounds[0]}]={report.grad_sq_runmin[0]:.4g} "
              f"runmin[{report.rounds[-1]}]={report.grad_sq_runmin[-1]:.4g} "
              f"fit C={report.fit_c:.4g} R2={report.fit_r2:.3f} "
              f"loglog slope={report.loglog_slope:.3f}")
        print(f"  wrote {out_csv}")
    return 0


def _format_value(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else str(value)


def _cmd_sweep(args) -> int:
    if args.param not in SWEEPABLE:
        raise ConfigError(
            f"unknown sweep parameter {args.param!r}; choose from "
            + ", ".join(sorted(set(SWEEPABLE)))
        )
    field = SWEEPABLE[args.param]
    try:
        values = [float(v) for v in args.values.split(",")]
    except ValueError:
        raise ConfigError(f"bad values list {args.values!r}") from None
    if not values:
        raise ConfigError("empty values list")
    config = load_config(args.config)
    out = Path(args.out if args.out else Path(args.config).stem + "_sweep")
    out.mkdir(parents=True, exist_ok=True)
    runs = {}
    for value in values:
        label = _format_value(value)
        sub = f"{field}_{label}"
        run_experiment(with_overrides(config, **{field: value}), out / sub)
        runs[label] = sub
    (out / "sweep.json").write_text(
        json.dumps(
            {"param": field, "values": [_format_value(v) for v in values],
             "runs": runs},
            sort_keys=True, indent=2,
        )
        + "\n"
    )
    render_sweep_plots(out)
    print(out)
    return 0


def _cmd_compare(args) -> int:
    sys.stdout.write(format_comparison(args.run_dirs, metric=args.metric))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgflow",
        description="Train and evaluate flow networks with meta and "
                    "personalized meta loops on small DAG environments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute one experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="run directory (default: <config>_run)")
    p.add_argument("--seeds", default=None, help="comma list overriding config seeds")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("plot", help="render SVG charts for a run or sweep")
    p.add_argument("run_dir")
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("theory", help="print bound reports and convergence fits")
    p.add_argument("run_dir")
    p.set_defaults(fn=_cmd_theory)

    p = sub.add_parser("sweep", help="run a config across parameter values")
    p.add_argument("config")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("compare", help="tabulate summaries of several runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--metric", default="reward",
                   choices=("reward", "l1", "l1_exact", "modes"))
    p.set_defaults(fn=_cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, HarnessError, PlotError, FileNotFoundError,
            NotADirectoryError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
