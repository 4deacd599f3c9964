"""
Seeded random search over the structural hyperparameters.

Each axis is drawn uniformly: discrete axes pick one of their choices, the
hidden width and the learning rate are drawn log-uniformly. All configs and
trial seeds are drawn before any training starts, so the outcome does not
depend on how trials are scheduled.
"""

import json
import logging
import math
import time
from concurrent.futures import Executor
from logging import warning
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import attr
import numpy as np
import pandas as pd

from tied_mixer.autograd import Rng
from tied_mixer.checkpoint import Checkpoint
from tied_mixer.data import PreparedSeries
from tied_mixer.defs import (
    NORM_KINDS,
    SEARCH_BATCH_SIZE,
    SEARCH_BLOCKS,
    SEARCH_BUDGET,
    SEARCH_HIDDEN_DIM,
    SEARCH_LEARNING_RATE,
    SEARCH_LOOKBACK,
    SEARCH_MAX_RESAMPLES,
    SEARCH_NORM_KINDS,
    SEARCH_ROUNDS,
    SEARCH_SLOTS,
)
from tied_mixer.errors import ConfigurationError, SearchError
from tied_mixer.model import Forecaster, ModelConfig
from tied_mixer.trainer import TrainConfig, train
from tied_mixer.validators import (
    all_one_of,
    non_empty_positive,
    optional_positive,
    ordered_pair,
    positive,
    to_float_tuple,
    to_int,
    to_int_tuple,
    to_str_tuple,
)


@attr.s(auto_attribs=True, frozen=True)
class SearchSpace:
    rounds: Tuple[int, ...] = attr.ib(
        default=SEARCH_ROUNDS, converter=to_int_tuple, validator=non_empty_positive
    )
    blocks: Tuple[int, ...] = attr.ib(
        default=SEARCH_BLOCKS, converter=to_int_tuple, validator=non_empty_positive
    )
    slots: Tuple[int, ...] = attr.ib(
        default=SEARCH_SLOTS, converter=to_int_tuple, validator=non_empty_positive
    )
    hidden_dim: Tuple[int, ...] = attr.ib(
        default=SEARCH_HIDDEN_DIM, converter=to_int_tuple, validator=ordered_pair()
    )
    learning_rate: Tuple[float, ...] = attr.ib(
        default=SEARCH_LEARNING_RATE, converter=to_float_tuple, validator=ordered_pair()
    )
    lookback: Tuple[int, ...] = attr.ib(
        default=SEARCH_LOOKBACK, converter=to_int_tuple, validator=non_empty_positive
    )
    batch_size: Tuple[int, ...] = attr.ib(
        default=SEARCH_BATCH_SIZE, converter=to_int_tuple, validator=non_empty_positive
    )
    norm_kinds: Tuple[str, ...] = attr.ib(
        default=SEARCH_NORM_KINDS, converter=to_str_tuple, validator=all_one_of(sorted(NORM_KINDS))
    )
    budget: int = attr.ib(default=SEARCH_BUDGET, converter=to_int, validator=positive)
    # Epochs per trial; None trains for the full train config
    trial_epochs: Optional[int] = attr.ib(
        default=10, converter=attr.converters.optional(to_int), validator=optional_positive
    )


def log_uniform(rng: Rng, low: float, high: float) -> float:
    if low == high:
        return float(low)
    return float(math.exp(rng.uniform(math.log(low), math.log(high))))


def sample_config(
    space: SearchSpace,
    rng: Rng,
    base: ModelConfig,
    base_train: Optional[TrainConfig] = None,
    *,
    fixed_lookback: bool = False,
    fits: Optional[Callable[[int, int], bool]] = None,
) -> Tuple[ModelConfig, TrainConfig]:
    """Draw one structural config on top of ``base`` (which supplies the
    horizon, channels, activation and dropout rate).

    ``fits(lookback, horizon)`` rejects configs whose windows do not fit the
    dataset splits; rejected draws are repeated up to 100 times. With
    ``fixed_lookback`` the lookback of ``base`` is kept.
    """
    base_train = base_train or TrainConfig()
    for _ in range(SEARCH_MAX_RESAMPLES):
        n_rounds = rng.choice(space.rounds)
        n_blocks = rng.choice(space.blocks)
        n_slots = rng.choice(space.slots)
        hidden_dim = int(round(log_uniform(rng, *space.hidden_dim)))
        learning_rate = log_uniform(rng, *space.learning_rate)
        lookback = base.lookback if fixed_lookback else rng.choice(space.lookback)
        batch_size = rng.choice(space.batch_size)
        norm_kind = rng.choice(space.norm_kinds)
        if fits is not None and not fits(lookback, base.horizon):
            continue
        model_config = attr.evolve(
            base,
            lookback=lookback,
            n_rounds=n_rounds,
            n_blocks=n_blocks,
            n_slots=n_slots,
            hidden_dim=hidden_dim,
            norm_kind=norm_kind,
        )
        train_config = attr.evolve(base_train, learning_rate=learning_rate, batch_size=batch_size)
        return model_config, train_config
    raise ConfigurationError(
        f"no sampled lookback fits the dataset splits after {SEARCH_MAX_RESAMPLES} draws",
        field="lookback",
    )


@attr.s(auto_attribs=True)
class Trial:
    index: int
    model_config: ModelConfig
    train_config: TrainConfig
    seed: int
    val_mse: float = math.inf
    wall_time: float = attr.ib(default=0.0, eq=False)
    error: Optional[str] = None
    checkpoint: Optional[str] = attr.ib(default=None, eq=False)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def record(self) -> dict:
        m, t = self.model_config, self.train_config
        return {
            "trial": self.index,
            "lookback": m.lookback,
            "n_rounds": m.n_rounds,
            "n_blocks": m.n_blocks,
            "n_slots": m.n_slots,
            "hidden_dim": m.hidden_dim,
            "norm_kind": m.norm_kind,
            "activation": m.activation,
            "dropout_rate": m.dropout_rate,
            "learning_rate": t.learning_rate,
            "batch_size": t.batch_size,
            "seed": self.seed,
            "val_mse": self.val_mse,
            "wall_time": self.wall_time,
            "error": self.error,
            "checkpoint": self.checkpoint,
        }


@attr.s(auto_attribs=True)
class SearchResult:
    best: Trial
    # Successful trials by ascending val MSE, ties by index
    leaderboard: List[Trial]
    failures: List[Trial] = attr.Factory(list)

    @property
    def trials(self) -> List[Trial]:
        return sorted(self.leaderboard + self.failures, key=lambda t: t.index)


# (prepared, model_config, train_config) -> validation MSE
TrialFn = Callable[..., float]


def train_trial(
    prepared: PreparedSeries,
    model_config: ModelConfig,
    train_config: TrainConfig,
    checkpoint_path: Optional[Union[str, Path]] = None,
) -> float:
    """Train a fresh model and return its best validation MSE. With
    ``checkpoint_path`` the trained model is saved there as well."""
    model = Forecaster.initialize(model_config, Rng(train_config.seed).child("init"))
    data = prepared.training_data(model_config.lookback, model_config.horizon)
    report = train(model, data, train_config)
    if checkpoint_path is not None:
        checkpoint = Checkpoint(
            model,
            prepared.norm_stats,
            prepared.series.feature_names,
            metadata={"best_val_loss": report.best_val_loss, "seed": train_config.seed},
        )
        checkpoint.save(checkpoint_path)
    return report.best_val_loss


def _run_trial(
    trial: Trial,
    prepared: PreparedSeries,
    trial_fn: TrialFn,
    checkpoint_dir: Optional[Path] = None,
) -> Trial:
    started = time.perf_counter()
    kwargs: Dict[str, Path] = {}
    if checkpoint_dir is not None:
        kwargs["checkpoint_path"] = checkpoint_dir / f"{trial.index}.json"
    try:
        val_mse = float(trial_fn(prepared, trial.model_config, trial.train_config, **kwargs))
        if math.isnan(val_mse):
            raise ValueError("validation MSE is NaN")
    except Exception as e:
        warning(f"Search trial {trial.index} failed: {e}")
        return attr.evolve(trial, error=f"trial {trial.index}: {e}", wall_time=time.perf_counter() - started)
    logging.info(f"Search trial {trial.index}: val MSE {val_mse:.6g}")
    checkpoint = str(kwargs["checkpoint_path"]) if kwargs else None
    return attr.evolve(
        trial, val_mse=val_mse, wall_time=time.perf_counter() - started, checkpoint=checkpoint
    )


def run_search(
    prepared: PreparedSeries,
    space: SearchSpace,
    base: ModelConfig,
    base_train: Optional[TrainConfig] = None,
    *,
    seed: int = 0,
    budget: Optional[int] = None,
    fixed_lookback: bool = False,
    trial_fn: TrialFn = train_trial,
    executor: Optional[Executor] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
) -> SearchResult:
    """Sample ``budget`` configs, train each and rank them by validation MSE.

    With ``checkpoint_dir`` every successful trial leaves its trained model
    in ``<checkpoint_dir>/<trial>.json``; ``trial_fn`` then receives a
    ``checkpoint_path`` keyword.

    Failed trials are reported but do not stop the search; a search where
    every trial fails raises ``SearchError`` listing the causes.
    """
    budget = space.budget if budget is None else budget
    if budget < 1:
        raise ConfigurationError(f"must be >= 1, got {budget}", field="budget")
    base_train = base_train or TrainConfig()
    if space.trial_epochs is not None:
        base_train = attr.evolve(base_train, max_epochs=space.trial_epochs)
    rng = Rng(seed).child("search")
    seeds = rng.child("trial-seeds").integers(2**31 - 1, size=budget)

    trials = []
    for index in range(budget):
        model_config, train_config = sample_config(
            space, rng, base, base_train, fixed_lookback=fixed_lookback, fits=prepared.fits
        )
        trial_seed = int(seeds[index])
        train_config = attr.evolve(train_config, seed=trial_seed)
        trials.append(Trial(index + 1, model_config, train_config, trial_seed))

    directory = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
    if executor is not None:
        finished = list(executor.map(lambda t: _run_trial(t, prepared, trial_fn, directory), trials))
    else:
        finished = [_run_trial(t, prepared, trial_fn, directory) for t in trials]

    failures = [t for t in finished if t.failed]
    leaderboard = sorted((t for t in finished if not t.failed), key=lambda t: (t.val_mse, t.index))
    if not leaderboard:
        raise SearchError(f"all {budget} search trials failed", [t.error or "" for t in failures])
    return SearchResult(best=leaderboard[0], leaderboard=leaderboard, failures=failures)


def write_leaderboard(result: SearchResult, path: Union[str, Path]):
    """Delimited table, ranked trials first and failed trials last."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [t.record() for t in result.leaderboard + result.failures]
    pd.DataFrame.from_records(rows).to_csv(path, index=False)


def write_trials_jsonl(trials: Sequence[Trial], path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wt", encoding="utf8") as f:
        for trial in trials:
            record = {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                      for k, v in trial.record().items()}
            f.write(json.dumps(record, sort_keys=True) + "\n")
