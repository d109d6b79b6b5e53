"""Command-line front end.

Subcommands: ``gen-data`` writes a benchmark histogram as CSV, ``run``
executes a config-driven experiment, ``demo-uncertainty`` runs the
difficult-dataset tradeoff demo, and ``report`` re-renders a results CSV
as a markdown table.  Exit codes: 0 success, 1 config error, 2 I/O
error, 3 when every trial failed to converge for some algorithm.
"""

import argparse
import math
import sys

from .benchdata import DatasetSpec, HistogramFileError, generate, save_histogram_file
from .harness import (
    ConfigError,
    emit_table,
    load_config,
    parse_report,
    render_uncertainty,
    run,
    uncertainty_demo,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_UNCONVERGED = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dphist",
        description="Differentially private histogram fitting benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a benchmark histogram CSV")
    gen.add_argument("--family", required=True,
                     choices=["level", "stair", "step", "splitstairs"])
    gen.add_argument("--k", type=int, default=0)
    gen.add_argument("--dims", type=int, choices=[1, 2], default=1)
    gen.add_argument("--out", required=True)

    runp = sub.add_parser("run", help="run a config-driven experiment")
    runp.add_argument("--config", required=True)
    runp.add_argument("--out", required=True)
    runp.add_argument("--format", choices=["csv", "md"], default="csv")
    runp.add_argument("--threads", type=int, default=1)

    demo = sub.add_parser("demo-uncertainty",
                          help="difficult-dataset tradeoff demo")
    demo.add_argument("--d", type=int, required=True)
    demo.add_argument("--eps", type=float, required=True)
    demo.add_argument("--trials", type=int, default=1000)
    demo.add_argument("--seed", type=int, default=0)

    rep = sub.add_parser("report", help="re-render a results CSV")
    rep.add_argument("--results", required=True)
    rep.add_argument("--format", choices=["csv", "md"], default="md")
    return parser


def _cmd_gen_data(args):
    spec = DatasetSpec(args.family, k=args.k, dims=args.dims)
    hist = generate(spec)
    save_histogram_file(hist, args.out)
    print(f"wrote {spec.label} to {args.out}")
    return EXIT_OK


def _cmd_run(args):
    config = load_config(args.config)
    report = run(config, threads=max(1, args.threads))
    text = emit_table(report, args.format)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {len(report.rows)} rows to {args.out}")
    dead = [a for a in report.algorithms()
            if all(math.isnan(r.value) for r in report.rows
                   if r.algorithm == a)]
    if dead:
        print(f"warning: no converged trials for: {', '.join(dead)}",
              file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_OK


def _cmd_demo(args):
    summary = uncertainty_demo(args.d, args.eps, trials=args.trials,
                               seed=args.seed)
    sys.stdout.write(render_uncertainty(summary))
    return EXIT_OK


def _cmd_report(args):
    with open(args.results, "r", encoding="utf-8") as fh:
        report = parse_report(fh.read())
    sys.stdout.write(emit_table(report, args.format))
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handler = {
        "gen-data": _cmd_gen_data,
        "run": _cmd_run,
        "demo-uncertainty": _cmd_demo,
        "report": _cmd_report,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, HistogramFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
