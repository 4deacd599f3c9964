"""
End-to-end commands: train, tune the dropout rate, search the structure,
evaluate and forecast. Each command reads and validates all of its inputs
before it writes anything.

Files written to the run output directory:

* ``checkpoint.json`` and ``train_log.jsonl`` (train)
* ``hho_trace.jsonl``, ``hho_result.json`` and ``tuned.manifest`` (tune)
* ``leaderboard.csv``, ``trials.jsonl``, ``trials/<trial>.json`` and
  ``best.manifest`` (search)
* ``results.csv`` and ``results.jsonl`` (eval, next to the checkpoint by default)
"""

import json
import logging
from concurrent.futures import Executor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import attr
import numpy as np
import pandas as pd

from tied_mixer.autograd import Rng
from tied_mixer.checkpoint import Checkpoint
from tied_mixer.data import PreparedSeries, load_csv, make_windows
from tied_mixer.defs import BENCHMARK_HORIZONS
from tied_mixer.errors import ContractError, InputError
from tied_mixer.hho import FitnessFn, HHOConfig, HHOResult, run_hho, write_trace
from tied_mixer.manifest import RunManifest, architecture_entries, load_dataset, write_key_values
from tied_mixer.metrics import EvalResult, benchmark, write_results
from tied_mixer.model import Forecaster, ModelConfig
from tied_mixer.search import SearchResult, run_search, write_leaderboard, write_trials_jsonl
from tied_mixer.trainer import TrainConfig, TrainReport, evaluate_loss, train

PathLike = Union[str, Path]


def make_fitness(
    prepared: PreparedSeries,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epochs: int,
) -> FitnessFn:
    """Validation MSE of a fresh model trained for ``epochs`` at a given
    dropout rate. Initialization and shuffling use the same seed for every
    rate, so the result depends on the rate only."""
    data = prepared.training_data(model_config.lookback, model_config.horizon)
    fitness_config = attr.evolve(train_config, max_epochs=epochs)

    def fitness(rate: float) -> float:
        config = attr.evolve(model_config, dropout_rate=rate)
        model = Forecaster.initialize(config, Rng(train_config.seed).child("init"))
        return train(model, data, fitness_config).best_val_loss

    return fitness


def train_model(
    prepared: PreparedSeries,
    model_config: ModelConfig,
    train_config: TrainConfig,
    log_path: Optional[PathLike] = None,
) -> Tuple[Forecaster, TrainReport]:
    model = Forecaster.initialize(model_config, Rng(train_config.seed).child("init"))
    data = prepared.training_data(model_config.lookback, model_config.horizon)
    report = train(model, data, train_config, log_path)
    return model, report


def run_train(run: RunManifest) -> Tuple[Checkpoint, TrainReport]:
    prepared = run.load()
    model_config = run.model_config(prepared)
    run.output_dir.mkdir(parents=True, exist_ok=True)
    model, report = train_model(
        prepared, model_config, run.train, run.output_dir / "train_log.jsonl"
    )
    test = prepared.windows("test", model_config.lookback, model_config.horizon, stride=1)
    test_mse = evaluate_loss(model, test, run.train.eval_batch_size)
    logging.info(
        f"Trained {model.parameter_count()} parameters for {report.epochs} epochs: "
        f"best val MSE {report.best_val_loss:.6f} (epoch {report.best_epoch}), "
        f"test MSE {test_mse:.6f}"
    )
    checkpoint = Checkpoint(
        model,
        prepared.norm_stats,
        prepared.series.feature_names,
        metadata={
            "dataset": run.dataset.name,
            "best_epoch": report.best_epoch,
            "best_val_loss": report.best_val_loss,
            "test_mse": test_mse,
            "seed": run.train.seed,
        },
    )
    checkpoint.save(run.output_dir / "checkpoint.json")
    return checkpoint, report


def tune_dropout(
    prepared: PreparedSeries,
    model_config: ModelConfig,
    train_config: TrainConfig,
    hho_config: HHOConfig,
    output_dir: Path,
    executor: Optional[Executor] = None,
) -> HHOResult:
    """Structural parameters stay fixed; only the dropout rate varies."""
    fitness = make_fitness(prepared, model_config, train_config, hho_config.fitness_epochs)
    result = run_hho(fitness, hho_config, executor)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_trace(result.events, output_dir / "hho_trace.jsonl")
    summary = {
        "best_rate": result.best_rate,
        "best_fitness": result.best_fitness,
        "trace": result.trace,
        "branch_counts": result.branch_counts,
        "evaluations": result.evaluations,
        "cache_hits": result.cache_hits,
    }
    (output_dir / "hho_result.json").write_text(
        json.dumps(summary, indent=4, sort_keys=True), encoding="utf8"
    )
    logging.info(
        f"Tuned dropout rate {result.best_rate:.6f} "
        f"(validation MSE {result.best_fitness:.6f}, {result.evaluations} trainings)"
    )
    return result


def run_tune(run: RunManifest, executor: Optional[Executor] = None) -> Tuple[HHOResult, Dict]:
    """Returns the HHO result and the entries of ``tuned.manifest``. They
    differ from the input only in ``model.dropout_rate`` and in relative
    paths, which are rewritten to hold from the output directory."""
    prepared = run.load()
    model_config = run.model_config(prepared)
    result = tune_dropout(prepared, model_config, run.train, run.hho, run.output_dir, executor)
    derived = run.derive({"model.dropout_rate": result.best_rate}, run.output_dir)
    write_key_values(run.output_dir / "tuned.manifest", derived)
    return result, derived


def run_structure_search(
    run: RunManifest,
    executor: Optional[Executor] = None,
    two_phase: bool = False,
) -> Tuple[SearchResult, Dict, Optional[HHOResult]]:
    """Random search over the structure, optionally followed by dropout
    tuning of the winner. ``best.manifest`` holds the winning structure (and
    tuned dropout rate) ready for training."""
    prepared = run.load()
    lookback = run.optional_lookback()
    base = run.model_config(
        prepared,
        attr.evolve(run.architecture, lookback=lookback or min(run.search.lookback)),
    )
    result = run_search(
        prepared,
        run.search,
        base,
        run.train,
        seed=run.seed,
        fixed_lookback=lookback is not None,
        executor=executor,
        checkpoint_dir=run.output_dir / "trials",
    )
    run.output_dir.mkdir(parents=True, exist_ok=True)
    write_leaderboard(result, run.output_dir / "leaderboard.csv")
    write_trials_jsonl(result.trials, run.output_dir / "trials.jsonl")
    best = result.best
    logging.info(f"Best trial {best.index}: val MSE {best.val_mse:.6f}")

    updates = architecture_entries(best.model_config.architecture())
    updates["train.learning_rate"] = best.train_config.learning_rate
    updates["train.batch_size"] = best.train_config.batch_size
    tuned = None
    if two_phase:
        train_config = attr.evolve(
            run.train,
            learning_rate=best.train_config.learning_rate,
            batch_size=best.train_config.batch_size,
        )
        tuned = tune_dropout(
            prepared, best.model_config, train_config, run.hho, run.output_dir, executor
        )
        updates["model.dropout_rate"] = tuned.best_rate
    derived = run.derive(updates, run.output_dir)
    write_key_values(run.output_dir / "best.manifest", derived)
    return result, derived, tuned


def run_eval(
    checkpoint_path: PathLike,
    manifest_path: PathLike,
    horizons: Sequence[int] = BENCHMARK_HORIZONS,
    raw_units: bool = False,
    output_dir: Optional[PathLike] = None,
    batch_size: int = 256,
) -> List[EvalResult]:
    checkpoint = Checkpoint.load(checkpoint_path)
    dataset, prepared = load_dataset(manifest_path)
    config = checkpoint.config
    if prepared.n_channels != config.n_channels:
        raise ContractError(
            f"checkpoint expects {config.n_channels} channels, "
            f"dataset {dataset.name} has {prepared.n_channels}"
        )
    test = make_windows(
        prepared.values,
        prepared.ranges.test,
        config.lookback,
        config.horizon,
        config.target_channels,
        stride=1,
        norm_stats=prepared.norm_stats,
    )
    results = benchmark(
        checkpoint.model, test, horizons, dataset.name,
        raw_units=raw_units, batch_size=batch_size,
    )
    out = Path(output_dir) if output_dir is not None else Path(checkpoint_path).parent
    write_results(results, out / "results.csv", out / "results.jsonl")
    return results


def forecast(checkpoint: Checkpoint, window: np.ndarray) -> np.ndarray:
    """``T x C_out`` forecast in raw units for one raw ``L x C`` window."""
    config = checkpoint.config
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != config.n_channels:
        raise InputError(
            f"expected a window of {config.n_channels} columns, got shape {window.shape}"
        )
    if window.shape[0] != config.lookback:
        raise InputError(
            f"expected {config.lookback} rows (the lookback), got {window.shape[0]}"
        )
    if checkpoint.norm_stats is None:
        return checkpoint.model.predict(window)
    standardized = checkpoint.norm_stats.apply(window)
    prediction = checkpoint.model.predict(standardized)
    return checkpoint.norm_stats.invert(prediction, config.target_channels)


def run_forecast(
    checkpoint_path: PathLike,
    input_path: PathLike,
    output_path: Optional[PathLike] = None,
    date_column: Optional[str] = None,
) -> pd.DataFrame:
    """Forecast from a CSV window and write the predictions as CSV (with the
    target channel names as header)."""
    checkpoint = Checkpoint.load(checkpoint_path)
    config = checkpoint.config
    series = load_csv(input_path, has_header=True, date_column=date_column)
    values = series.values
    names = checkpoint.feature_names
    if names is not None and series.feature_names != names:
        missing = [n for n in names if n not in series.feature_names]
        if missing:
            raise InputError(f"input window lacks the features {missing}")
        values = values[:, list(series.channel_indices(names))]
    prediction = forecast(checkpoint, values)
    columns = list(checkpoint.target_names or [f"col{c}" for c in config.target_channels])
    frame = pd.DataFrame(prediction, columns=columns)
    if output_path is not None:
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(output_path, index=False, float_format="%.17g")
    return frame
