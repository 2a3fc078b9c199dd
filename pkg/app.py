# app.py: command-line router (root)
import argparse
import sys
import traceback
import warnings
from pathlib import Path

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from Backend.config_loader import load_config  # noqa: E402
from Backend.experiment_func import (  # noqa: E402
    cmd_build,
    cmd_error_bound,
    cmd_mutants,
    cmd_rates,
    cmd_replication_compare,
    cmd_ssa,
)
from Model_Core.errors import ConfigError, FgbaError, FgbaWarning  # noqa: E402

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = {
    "mutants": lambda cfg, args: cmd_mutants(cfg),
    "replication-compare": lambda cfg, args: cmd_replication_compare(cfg),
    "ssa": lambda cfg, args: cmd_ssa(cfg),
    "error-bound": lambda cfg, args: cmd_error_bound(cfg),
    "build": lambda cfg, args: cmd_build(cfg, ratio=args.ratio, dump=args.dump),
    "rates": lambda cfg, args: cmd_rates(cfg),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Fluorescence-grid CME experiments: histograms, oracles and error traces.",
    )
    parser.add_argument("--config", type=Path, default=None, help="YAML experiment config (merged over the defaults)")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="base seed for stochastic runs")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mutants", help="six-mutant histograms at t_end")
    sub.add_parser("replication-compare", help="variance under continuous, halving and binomial replication")
    sub.add_parser("ssa", help="stochastic-simulation histogram")
    sub.add_parser("error-bound", help="aggregation error trace on the single-phase instance")
    build = sub.add_parser("build", help="dump the experiment generator as triplets")
    build.add_argument("--ratio", type=float, default=None, help="k_R/k_-R of the mutant to build")
    build.add_argument("--dump", type=Path, default=None, help="triplet file path (default <out>/generator.txt)")
    sub.add_parser("rates", help="resolved rates, K and stationary phases")
    return parser


def _safe_run(args):
    """Run one command; returns the process exit code."""
    try:
        config = load_config(args.config, output_dir=args.out, seed=args.seed, threads=args.threads)
    except ConfigError as e:
        print(f"[Config] error: {e}", file=sys.stderr, flush=True)
        return EXIT_CONFIG

    with warnings.catch_warnings():
        warnings.simplefilter("always", FgbaWarning)
        warnings.showwarning = _show_warning
        try:
            COMMANDS[args.command](config, args)
        except ConfigError as e:
            print(f"[Config] error: {e}", file=sys.stderr, flush=True)
            return EXIT_CONFIG
        except FgbaError as e:
            print(f"[Runner] {args.command} failed: {e}", file=sys.stderr, flush=True)
            return EXIT_NUMERICAL
        except (ArithmeticError, MemoryError) as e:
            print(f"[Runner] {args.command} failed: {e}", file=sys.stderr, flush=True)
            print(traceback.format_exc(), file=sys.stderr, flush=True)
            return EXIT_NUMERICAL
        except OSError as e:
            print(f"[Runner] {args.command} failed: {e}", file=sys.stderr, flush=True)
            return EXIT_NUMERICAL
    return EXIT_OK


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"[Warning] {message}", file=sys.stderr, flush=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    return _safe_run(args)


if __name__ == "__main__":
    sys.exit(main())
