from pathlib import Path
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from tied_mixer.autograd import Tensor
from tied_mixer.manifest import write_key_values
from tied_mixer.model import ModelConfig
from tied_mixer.synthetic import sum_of_sinusoids, write_csv


class ScriptedRng:
    """Stands in for ``Rng`` and hands out scripted draws in order.

    ``random`` and ``uniform`` return the next value as is (already in the
    target range); ``integers`` returns it as an int.
    """

    def __init__(self, values: Iterable[float]):
        self.values = list(values)
        self.drawn = 0

    def _next(self) -> float:
        if self.drawn >= len(self.values):
            raise AssertionError(f"unscripted draw #{self.drawn + 1}")
        value = self.values[self.drawn]
        self.drawn += 1
        return value

    def random(self, size=None):
        return self._next()

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._next()

    def integers(self, high, size=None):
        return int(self._next())

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._next()


def numeric_gradient(f: Callable[[], float], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to every entry
    of ``tensor``, perturbing its data in place."""
    grad = np.zeros_like(tensor.data)
    for index in np.ndindex(tensor.shape):
        original = tensor.data[index]
        tensor.data[index] = original + h
        upper = f()
        tensor.data[index] = original - h
        lower = f()
        tensor.data[index] = original
        grad[index] = (upper - lower) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute difference relative to the largest magnitude."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def tiny_config(**overrides) -> ModelConfig:
    settings = dict(
        lookback=8,
        horizon=4,
        n_channels=3,
        target_channels=(0, 1, 2),
        n_rounds=2,
        n_blocks=2,
        n_slots=4,
        hidden_dim=5,
        dropout_rate=0.0,
    )
    settings.update(overrides)
    return ModelConfig(**settings)


def write_synthetic_run(
    directory: Path,
    n_timesteps: int = 200,
    dataset: Optional[Dict[str, object]] = None,
    run: Optional[Dict[str, object]] = None,
    noise: float = 0.0,
) -> Path:
    """Write a synthetic CSV, its dataset manifest and a small run manifest
    into ``directory``; returns the run manifest path."""
    write_csv(sum_of_sinusoids(n_timesteps, 3, noise=noise), directory / "series.csv")
    dataset_entries: Dict[str, object] = {
        "name": "sines",
        "path": "series.csv",
        "horizon": 4,
        "lookback": 8,
        "split": "fractions: 0.7, 0.1, 0.2",
    }
    dataset_entries.update(dataset or {})
    write_key_values(directory / "sines.manifest", dataset_entries)
    run_entries: Dict[str, object] = {
        "data.manifest": "sines.manifest",
        "model.n_rounds": 2,
        "model.n_blocks": 1,
        "model.n_slots": 4,
        "model.hidden_dim": 8,
        "train.max_epochs": 2,
        "train.batch_size": 16,
        "hho.population": 2,
        "hho.max_iterations": 1,
        "hho.fitness_epochs": 1,
        "search.budget": 2,
        "search.trial_epochs": 1,
        "search.lookback": "4, 8",
        "search.slots": "4, 8",
        "search.hidden_dim": "4, 16",
        "search.rounds": "1, 2",
        "search.blocks": "1",
        "run.output_dir": "out",
        "run.seed": 0,
    }
    run_entries.update(run or {})
    path = directory / "run.manifest"
    write_key_values(path, run_entries)
    return path
