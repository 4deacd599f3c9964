import hashlib
import json
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import attr
import numpy as np
import pandas as pd

from tied_mixer.data import WindowedDataset
from tied_mixer.defs import BENCHMARK_HORIZONS, RESULT_COLUMNS
from tied_mixer.errors import ContractError
from tied_mixer.model import Forecaster, ModelConfig


def _check_shapes(name: str, pred: np.ndarray, truth: np.ndarray):
    if pred.shape != truth.shape:
        raise ContractError(f"{name}: prediction {pred.shape} vs truth {truth.shape}")
    if pred.size == 0:
        raise ContractError(f"{name}: no entries to score")


def mse(pred, truth) -> float:
    """
    >>> mse([[1.0, 2.0]], [[1.5, 2.5]])
    0.25
    """
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    _check_shapes("mse", pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    """
    >>> mae([0.5, -0.5], [0.0, 0.0])
    0.5
    """
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    _check_shapes("mae", pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def _non_negative(instance, attribute, value):
    if not value >= 0:
        raise ContractError(f"{attribute.name} must be >= 0, got {value}")


@attr.s(auto_attribs=True, frozen=True)
class EvalResult:
    dataset: str
    horizon: int
    mse: float = attr.ib(validator=_non_negative)
    mae: float = attr.ib(validator=_non_negative)
    windows: int
    config_hash: str

    def __attrs_post_init__(self):
        # Jensen: the mean absolute error never exceeds the root mean square
        if self.mae > math.sqrt(self.mse) * (1 + 1e-12) + 1e-15:
            raise ContractError(f"MAE {self.mae} exceeds sqrt(MSE) {math.sqrt(self.mse)}")


def config_hash(config: ModelConfig) -> str:
    """Short stable digest of a model configuration."""
    payload = json.dumps(attr.asdict(config, retain_collection_types=False), sort_keys=True)
    return hashlib.sha1(payload.encode("utf8")).hexdigest()[:12]


def predict_windows(
    model: Forecaster, dataset: WindowedDataset, batch_size: int = 256
) -> Tuple[np.ndarray, np.ndarray]:
    """Inference-mode predictions and targets for every window, each
    ``windows x T x C_out``."""
    if dataset.horizon != model.config.horizon or dataset.lookback != model.config.lookback:
        raise ContractError(
            f"windows are {dataset.lookback}->{dataset.horizon} steps, "
            f"model is {model.config.lookback}->{model.config.horizon}"
        )
    if dataset.n_channels != model.config.n_channels:
        raise ContractError(
            f"dataset has {dataset.n_channels} channels, model expects {model.config.n_channels}"
        )
    inputs, targets = dataset.arrays()
    return model.predict(inputs, batch_size), targets


def benchmark(
    model: Forecaster,
    test: WindowedDataset,
    horizons: Sequence[int] = BENCHMARK_HORIZONS,
    dataset_name: str = "dataset",
    *,
    raw_units: bool = False,
    batch_size: int = 256,
) -> List[EvalResult]:
    """Score ``model`` on every test window for each horizon.

    A horizon ``h`` below the model's ``T`` scores the first ``h`` predicted
    steps, so all horizons share the same windows. With ``raw_units`` the
    predictions and targets are mapped back with the dataset's training
    statistics first.
    """
    config = model.config
    too_long = [h for h in horizons if h > config.horizon or h <= 0]
    if too_long:
        raise ContractError(
            f"horizons {too_long} outside [1, {config.horizon}] of the checkpoint"
        )
    pred, truth = predict_windows(model, test, batch_size)
    if raw_units:
        if test.norm_stats is None:
            raise ContractError("raw-unit evaluation needs the training statistics")
        pred = test.norm_stats.invert(pred, config.target_channels)
        truth = test.norm_stats.invert(truth, config.target_channels)
    digest = config_hash(config)
    results = [
        EvalResult(
            dataset=dataset_name,
            horizon=h,
            mse=mse(pred[:, :h], truth[:, :h]),
            mae=mae(pred[:, :h], truth[:, :h]),
            windows=len(test),
            config_hash=digest,
        )
        for h in horizons
    ]
    return sorted(results, key=lambda r: (r.dataset, r.horizon))


def linear_baseline(
    train: WindowedDataset, test: WindowedDataset, ridge: float = 0.0
) -> float:
    """Test MSE of a per-channel least-squares map from the lookback of each
    target channel (plus a bias) to its horizon."""
    train_x, train_y = train.arrays()
    test_x, test_y = test.arrays()
    predictions = np.empty_like(test_y)
    for j, c in enumerate(train.target_channels):
        design = np.concatenate([train_x[:, :, c], np.ones((len(train_x), 1))], axis=1)
        if ridge > 0:
            gram = design.T @ design + ridge * np.eye(design.shape[1])
            weights = np.linalg.solve(gram, design.T @ train_y[:, :, j])
        else:
            weights, *_ = np.linalg.lstsq(design, train_y[:, :, j], rcond=None)
        test_design = np.concatenate([test_x[:, :, c], np.ones((len(test_x), 1))], axis=1)
        predictions[:, :, j] = test_design @ weights
    return mse(predictions, test_y)


def results_frame(results: Sequence[EvalResult]) -> pd.DataFrame:
    rows = [attr.asdict(r) for r in sorted(results, key=lambda r: (r.dataset, r.horizon))]
    return pd.DataFrame.from_records(rows, columns=list(RESULT_COLUMNS))


def write_results(
    results: Sequence[EvalResult],
    csv_path: Optional[Union[str, Path]] = None,
    jsonl_path: Optional[Union[str, Path]] = None,
):
    """Write the results table as CSV and/or one JSON record per line, in
    ``(dataset, horizon)`` order."""
    frame = results_frame(results)
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(csv_path, index=False)
    if jsonl_path is not None:
        Path(jsonl_path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_json(jsonl_path, orient="records", lines=True)
