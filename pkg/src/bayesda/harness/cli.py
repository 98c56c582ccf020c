"""Command-line front door.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(weight collapse, matrix not SPD, non-convergence).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from ..core import NumericalError, RngStream
from ..models import OdeForwardModel, simulate
from .config import FORMATS, ConfigError, parse_config
from .report import emit_report, write_series_csv
from .runner import build_model, bench, compare, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", required=True, help="experiment config (YAML or JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help=out_help)
    p.add_argument("--format", choices=FORMATS, help="report format (default: config or csv)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (bench only)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bayesda", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("simulate", help="generate synthetic truth and data"),
            "observation CSV (truth goes to --truth-out)")
    sub.choices["simulate"].add_argument("--truth-out", help="truth CSV path")
    _common(sub.add_parser("run", help="run one method"), "report path (default: stdout)")
    cmp_ = sub.add_parser("compare", help="run several filters on shared data")
    _common(cmp_, "report path (default: stdout)")
    cmp_.add_argument("--methods", required=True,
                      help="comma-separated filters; the first is the reference")
    bench_ = sub.add_parser("bench", help="error-vs-N rate study against the Kalman filter")
    _common(bench_, "report path (default: stdout)")
    bench_.add_argument("--Ns", default="100,400,1600,6400", help="comma-separated ensemble sizes")
    bench_.add_argument("--n-seeds", type=int, default=20)
    return parser


def _load(args):
    with open(args.config) as fh:
        cfg = parse_config(fh.read())
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed: must be nonnegative")
        cfg = cfg.with_seed(args.seed)
    if args.format is not None:
        cfg = replace(cfg, format=args.format)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _emit(report, cfg):
    text = emit_report(report, cfg.format, cfg.out)
    if cfg.out is None:
        sys.stdout.write(text)


def _simulate(args, cfg):
    model = build_model(cfg)
    if isinstance(model, OdeForwardModel):
        raise ConfigError("model: simulate needs a state-space model")
    run = simulate(model, cfg.J, RngStream(cfg.seed, "data"))
    if args.out is None:
        raise ConfigError("--out: simulate needs an output path")
    write_series_csv(args.out, "y", run.data, start=1)
    if args.truth_out:
        write_series_csv(args.truth_out, "v", run.truth, start=0)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "simulate":
            _simulate(args, cfg)
        elif args.command == "run":
            _emit(run_experiment(cfg), cfg)
        elif args.command == "compare":
            _emit(compare(cfg, [m.strip() for m in args.methods.split(",") if m.strip()]), cfg)
        else:
            Ns = [int(n) for n in args.Ns.split(",")]
            _emit(bench(cfg, Ns, args.n_seeds, args.threads), cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
