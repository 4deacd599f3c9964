"""Synthetic multichannel series for smoke runs and tests."""

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from tied_mixer.autograd import Rng
from tied_mixer.data import RawSeries


def sum_of_sinusoids(
    n_timesteps: int,
    n_channels: int = 3,
    periods: Sequence[float] = (24.0, 12.0, 7.0),
    noise: float = 0.0,
    seed: int = 0,
) -> RawSeries:
    """Each channel is a sum of sines with the given periods, random phases
    and amplitudes in ``[0.5, 1.5]``, plus optional Gaussian noise.

    >>> series = sum_of_sinusoids(100, 2)
    >>> series.values.shape, series.feature_names
    ((100, 2), ('s0', 's1'))
    """
    rng = Rng(seed).child("synthetic")
    t = np.arange(n_timesteps, dtype=np.float64)[:, np.newaxis]
    periods_ = np.asarray(periods, dtype=np.float64)
    phases = rng.uniform(0.0, 2 * np.pi, (n_channels, len(periods_)))
    amplitudes = rng.uniform(0.5, 1.5, (n_channels, len(periods_)))
    values = np.zeros((n_timesteps, n_channels))
    for c in range(n_channels):
        values[:, c] = (amplitudes[c] * np.sin(2 * np.pi * t / periods_ + phases[c])).sum(axis=1)
    if noise > 0:
        values += rng.normal(0.0, noise, values.shape)
    return RawSeries(values, [f"s{c}" for c in range(n_channels)])


def write_csv(
    series: RawSeries, path: Union[str, Path], date_column: Optional[str] = None
):
    """Write ``series`` with a header; ``date_column`` adds a leading column
    of timestep indices (or the series timestamps)."""
    frame = pd.DataFrame(series.values, columns=list(series.feature_names))
    if date_column is not None:
        stamps = series.timestamps or [str(i) for i in range(series.n_timesteps)]
        frame.insert(0, date_column, list(stamps))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
