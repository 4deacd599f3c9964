"""
Command-line entry point::

    tied-mixer train --manifest run.manifest
    tied-mixer tune --manifest run.manifest --jobs 4
    tied-mixer search --manifest run.manifest --two-phase
    tied-mixer eval --checkpoint runs/x/checkpoint.json --manifest etth1.manifest
    tied-mixer forecast --checkpoint runs/x/checkpoint.json --input window.csv

Exit codes: 0 on success, 2 on a configuration error, 3 on a data error and
4 on any other failure.
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Iterator, List, Optional

from tied_mixer import __version__
from tied_mixer.defs import BENCHMARK_HORIZONS
from tied_mixer.errors import ConfigurationError, DataError
from tied_mixer.manifest import RunManifest
from tied_mixer.pipeline import (
    run_eval,
    run_forecast,
    run_structure_search,
    run_train,
    run_tune,
)
from tied_mixer.validators import to_int_tuple

EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_DATA = 3
EXIT_FAILURE = 4


def _add_run_options(parser: argparse.ArgumentParser, jobs: bool = False):
    parser.add_argument("--manifest", required=True, help="run manifest")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", default=None, help="override run.output_dir")
    if jobs:
        parser.add_argument(
            "--jobs", type=int, default=1, help="parallel fitness evaluations or trials"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tied-mixer",
        description="Tied-weight mixer forecasting: train, tune, search, evaluate, forecast",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train a model and write a checkpoint")
    _add_run_options(train)

    tune = commands.add_parser("tune", help="tune the dropout rate with Harris Hawks")
    _add_run_options(tune, jobs=True)

    search = commands.add_parser("search", help="random search over the structure")
    _add_run_options(search, jobs=True)
    search.add_argument(
        "--two-phase", action="store_true", help="tune the dropout rate of the winner"
    )

    evaluate = commands.add_parser("eval", help="benchmark a checkpoint on a test split")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--manifest", required=True, help="dataset or run manifest")
    evaluate.add_argument(
        "--horizons",
        default=",".join(str(h) for h in BENCHMARK_HORIZONS),
        help="comma-separated horizons (default: %(default)s)",
    )
    evaluate.add_argument(
        "--raw-units", action="store_true", help="score in the units of the data"
    )
    evaluate.add_argument("--out", default=None, help="results directory")

    forecast = commands.add_parser("forecast", help="forecast from a CSV window")
    forecast.add_argument("--checkpoint", required=True)
    forecast.add_argument("--input", required=True, help="CSV with exactly lookback rows")
    forecast.add_argument("--date-column", default=None)
    forecast.add_argument("--out", default=None, help="output CSV (default: stdout)")
    return parser


@contextmanager
def _executor(jobs: int) -> Iterator[Optional[ThreadPoolExecutor]]:
    if jobs < 1:
        raise ConfigurationError(f"must be >= 1, got {jobs}", field="jobs")
    if jobs == 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        yield executor


def _run_manifest(args) -> RunManifest:
    return RunManifest.from_file(args.manifest, seed=args.seed, output_dir=args.out)


def _dispatch(args):
    if args.command == "train":
        checkpoint, report = run_train(_run_manifest(args))
        print(f"best val MSE {report.best_val_loss:.6f} at epoch {report.best_epoch}")
    elif args.command == "tune":
        run = _run_manifest(args)
        with _executor(args.jobs) as executor:
            result, _ = run_tune(run, executor)
        print(f"dropout rate {result.best_rate:.6f} (val MSE {result.best_fitness:.6f})")
    elif args.command == "search":
        run = _run_manifest(args)
        with _executor(args.jobs) as executor:
            result, _, tuned = run_structure_search(run, executor, two_phase=args.two_phase)
        print(f"best trial {result.best.index}: val MSE {result.best.val_mse:.6f}")
        if tuned is not None:
            print(f"dropout rate {tuned.best_rate:.6f} (val MSE {tuned.best_fitness:.6f})")
    elif args.command == "eval":
        horizons = to_int_tuple(args.horizons)
        results = run_eval(
            args.checkpoint, args.manifest, horizons, raw_units=args.raw_units, output_dir=args.out
        )
        for r in results:
            print(f"{r.dataset}\t{r.horizon}\tmse={r.mse:.6f}\tmae={r.mae:.6f}")
    elif args.command == "forecast":
        frame = run_forecast(args.checkpoint, args.input, args.out, args.date_column)
        if args.out is None:
            print(frame.to_csv(index=False, float_format="%.17g"), end="")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except ConfigurationError as e:
        logging.error(f"configuration error: {e}")
        return EXIT_CONFIGURATION
    except DataError as e:
        logging.error(f"data error: {e}")
        return EXIT_DATA
    except Exception as e:
        logging.exception(f"{args.command} failed: {e}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
