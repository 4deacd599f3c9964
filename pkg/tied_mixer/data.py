"""
CSV ingest, chronological splits, z-score standardization and sliding
lookback/horizon windows.

Splits never overlap: every window lies entirely inside one split, so the
last training target precedes the first validation input.
"""

import logging
from logging import warning
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple, Union

import attr
import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from tied_mixer.defs import (
    DATASET_PRESETS,
    DEFAULT_SPLIT_FRACTIONS,
    ETT_HOURLY_BOUNDARIES,
    ETT_MINUTE_BOUNDARIES,
)
from tied_mixer.errors import ConfigurationError, IngestError

Range = Tuple[int, int]
SPLIT_NAMES = ("train", "val", "test")


@attr.s(auto_attribs=True, eq=False)
class RawSeries:
    """A ``timesteps x features`` matrix of finite values."""

    values: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=np.float64))
    feature_names: Tuple[str, ...] = attr.ib(converter=tuple)
    timestamps: Optional[Tuple[str, ...]] = attr.ib(
        default=None, converter=attr.converters.optional(tuple)
    )

    def __attrs_post_init__(self):
        if self.values.ndim != 2:
            raise IngestError(f"expected a 2-d matrix, got shape {self.values.shape}")
        if self.values.shape[0] < 2:
            raise IngestError(f"need at least 2 timesteps, got {self.values.shape[0]}")
        if self.values.shape[1] != len(self.feature_names):
            raise IngestError(
                f"{self.values.shape[1]} columns but {len(self.feature_names)} feature names"
            )
        if not np.isfinite(self.values).all():
            raise IngestError("series contains non-finite values")
        if self.timestamps is not None and len(self.timestamps) != self.values.shape[0]:
            raise IngestError("timestamps and values have different lengths")

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def channel_indices(self, names: Sequence[str]) -> Tuple[int, ...]:
        """Column positions of the given feature names.

        >>> RawSeries([[1, 2], [3, 4]], ["a", "b"]).channel_indices(["b"])
        (1,)
        """
        positions = {name: i for i, name in enumerate(self.feature_names)}
        missing = [n for n in names if n not in positions]
        if missing:
            raise ConfigurationError(
                f"unknown features {missing}; available: {list(self.feature_names)}",
                field="target_channels",
            )
        return tuple(positions[n] for n in names)


def _column_names(n: int) -> list:
    return [f"col{i}" for i in range(n)]


def load_csv(
    path: Union[str, Path], has_header: bool = True, date_column: Optional[str] = None
) -> RawSeries:
    """Read a comma-separated file into a ``RawSeries``.

    Column order is preserved. Without a header the columns are named
    ``col0``, ``col1``, ... and ``date_column`` may refer to those names.
    Rows in error messages are 1-based data rows (the header not counted).
    """
    path = Path(path)
    if not path.exists():
        raise IngestError("file does not exist", path=str(path))
    try:
        frame = pd.read_csv(
            path,
            header=0 if has_header else None,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf8",
        )
    except pd.errors.EmptyDataError:
        raise IngestError("file is empty", path=str(path)) from None
    except pd.errors.ParserError as e:
        raise IngestError(f"ragged rows: {e}", path=str(path)) from None
    if not has_header:
        frame.columns = _column_names(frame.shape[1])
    frame.columns = [str(c).strip() for c in frame.columns]

    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.argmax(short)) + 1
        raise IngestError(
            f"expected {frame.shape[1]} fields", path=str(path), row=row
        )

    timestamps = None
    if date_column is not None:
        if date_column not in frame.columns:
            raise IngestError(
                f"date column not found among {list(frame.columns)}",
                path=str(path),
                column=date_column,
            )
        timestamps = tuple(frame[date_column].str.strip())
        frame = frame.drop(columns=[date_column])
    if frame.shape[1] == 0:
        raise IngestError("no feature columns", path=str(path))

    numeric = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.argwhere(~np.isfinite(numeric))
    if len(bad):
        r, c = bad[0]
        raise IngestError(
            f"cannot parse {frame.iat[r, c]!r} as a finite number",
            path=str(path),
            row=int(r) + 1,
            column=str(frame.columns[c]),
        )
    if numeric.shape[0] < 2:
        raise IngestError(f"need at least 2 rows, got {numeric.shape[0]}", path=str(path))
    logging.info(f"Loaded {numeric.shape[0]}x{numeric.shape[1]} series from {path}")
    return RawSeries(numeric, list(frame.columns), timestamps)


def _check_fractions(instance, attribute, value):
    if value is None:
        return
    if len(value) != 3 or min(value) < 0:
        raise ConfigurationError(f"expected three non-negative fractions, got {value}", field="split")
    if abs(sum(value) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got {sum(value)}", field="split")


def _check_boundaries(instance, attribute, value):
    if value is None:
        return
    if len(value) != 3 or value[0] <= 0 or not value[0] < value[1] < value[2]:
        raise ConfigurationError(
            f"expected three strictly increasing positive indices, got {value}",
            field="split",
        )


def _optional_floats(value):
    return None if value is None else tuple(float(v) for v in value)


def _optional_ints(value):
    return None if value is None else tuple(int(v) for v in value)


@attr.s(auto_attribs=True, frozen=True)
class SplitSpec:
    """Either train/val/test fractions or the end index of each split."""

    fractions: Optional[Tuple[float, float, float]] = attr.ib(
        default=None, converter=_optional_floats, validator=_check_fractions
    )
    boundaries: Optional[Tuple[int, int, int]] = attr.ib(
        default=None, converter=_optional_ints, validator=_check_boundaries
    )

    def __attrs_post_init__(self):
        if (self.fractions is None) == (self.boundaries is None):
            raise ConfigurationError(
                "give either split fractions or split boundaries", field="split"
            )

    @classmethod
    def default(cls) -> "SplitSpec":
        return cls(fractions=DEFAULT_SPLIT_FRACTIONS)

    @classmethod
    def ett_hourly(cls) -> "SplitSpec":
        """12/4/4 months of hourly samples."""
        return cls(boundaries=ETT_HOURLY_BOUNDARIES)

    @classmethod
    def ett_minute(cls) -> "SplitSpec":
        """12/4/4 months of 15-minute samples."""
        return cls(boundaries=ETT_MINUTE_BOUNDARIES)

    @classmethod
    def for_preset(cls, name: str) -> "SplitSpec":
        """
        >>> SplitSpec.for_preset("ETTh1").boundaries
        (8640, 11520, 14400)
        >>> SplitSpec.for_preset("traffic").fractions
        (0.7, 0.1, 0.2)
        """
        key = name.lower()
        if key not in DATASET_PRESETS:
            raise ConfigurationError(
                f"no preset for dataset {name!r}; known: {', '.join(sorted(DATASET_PRESETS))}",
                field="split",
            )
        mode = DATASET_PRESETS[key][2]
        if mode == "ett-hourly":
            return cls.ett_hourly()
        if mode == "ett-minute":
            return cls.ett_minute()
        return cls.default()


@attr.s(auto_attribs=True, frozen=True)
class SplitRanges:
    """Half-open ``[start, end)`` timestep ranges."""

    train: Range
    val: Range
    test: Range

    def __getitem__(self, split: str) -> Range:
        if split not in SPLIT_NAMES:
            raise KeyError(split)
        return getattr(self, split)

    def __iter__(self) -> Iterator[Range]:
        return iter((self.train, self.val, self.test))


def chronological_split(
    series: Union[RawSeries, int], spec: SplitSpec, window_length: int = 1
) -> SplitRanges:
    """Cut ``[0, n)`` into consecutive train/val/test ranges.

    ``window_length`` is ``L + T``; every range must hold at least one window.

    >>> chronological_split(100, SplitSpec(fractions=(0.7, 0.1, 0.2)))
    SplitRanges(train=(0, 70), val=(70, 80), test=(80, 100))
    """
    n = series if isinstance(series, int) else series.n_timesteps
    if spec.fractions is not None:
        f_train, _, f_test = spec.fractions
        n_train = int(n * f_train + 1e-9)
        n_test = int(n * f_test + 1e-9)
        ends = (n_train, n - n_test, n)
    else:
        assert spec.boundaries is not None
        ends = spec.boundaries
        if ends[2] > n:
            raise ConfigurationError(
                f"split boundaries {ends} exceed the series length {n}", field="split"
            )
        if ends[2] < n:
            logging.info(f"Split boundaries leave the last {n - ends[2]} timesteps unused")
    ranges = SplitRanges((0, ends[0]), (ends[0], ends[1]), (ends[1], ends[2]))
    for name, (start, end) in zip(SPLIT_NAMES, ranges):
        if end - start < max(window_length, 1):
            raise ConfigurationError(
                f"{name} range [{start}, {end}) is shorter than the window length {window_length}",
                field="split",
            )
    return ranges


@attr.s(auto_attribs=True, eq=False)
class NormStats:
    """Per-feature mean and std of the training range."""

    mean: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=np.float64))
    std: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=np.float64))

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values: np.ndarray, channels: Optional[Sequence[int]] = None) -> np.ndarray:
        """Map standardized values of ``channels`` (all by default) back to
        raw units."""
        idx = slice(None) if channels is None else list(channels)
        return np.asarray(values, dtype=np.float64) * self.std[idx] + self.mean[idx]


def standardize(
    values: np.ndarray, train_range: Range, feature_names: Optional[Sequence[str]] = None
) -> Tuple[np.ndarray, NormStats]:
    """Z-score every feature with the statistics of ``train_range`` only
    (population std). A constant training feature keeps std 1.

    >>> z, stats = standardize(np.array([[1.0], [2.0], [3.0], [10.0]]), (0, 3))
    >>> float(stats.mean[0]), float(z[1, 0])
    (2.0, 0.0)
    """
    values = np.asarray(values, dtype=np.float64)
    start, end = train_range
    train = values[start:end]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    for c in np.flatnonzero(std <= 0):
        name = feature_names[c] if feature_names is not None else f"#{c}"
        warning(f"Feature {name} is constant over the training range; using std 1")
        std[c] = 1.0
    stats = NormStats(mean, std)
    return stats.apply(values), stats


def _check_extent(name: str, value: int):
    if value <= 0:
        raise ConfigurationError(f"must be > 0, got {value}", field=name)


@attr.s(auto_attribs=True, eq=False)
class WindowedDataset:
    """Sliding windows over ``values`` (already restricted to one split).

    Window ``k`` starts at ``k * stride``: its input is the next ``lookback``
    rows and its target the following ``horizon`` rows of the target
    channels. Windows are views into ``values``; ``batch`` copies.
    """

    values: np.ndarray
    lookback: int
    horizon: int
    target_channels: Tuple[int, ...]
    stride: int = 1
    start: int = 0
    norm_stats: Optional[NormStats] = None

    def __attrs_post_init__(self):
        _check_extent("lookback", self.lookback)
        _check_extent("horizon", self.horizon)
        _check_extent("stride", self.stride)
        n = self.values.shape[0]
        if n < self.lookback + self.horizon:
            raise ConfigurationError(
                f"range of {n} steps is shorter than lookback + horizon = "
                f"{self.lookback + self.horizon}",
                field="lookback",
            )
        window = sliding_window_view(self.values, self.lookback + self.horizon, axis=0)
        self._windows = np.swapaxes(window, -1, -2)[:: self.stride]

    def __len__(self) -> int:
        return self._windows.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def window_start(self, k: int) -> int:
        """Absolute timestep where window ``k`` begins."""
        return self.start + k * self.stride

    def __getitem__(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        window = self._windows[k]
        return window[: self.lookback], window[self.lookback :, list(self.target_channels)]

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return (self[k] for k in range(len(self)))

    def batch(self, indices: Union[Sequence[int], np.ndarray, slice]) -> Tuple[np.ndarray, np.ndarray]:
        """Inputs ``B x L x C`` and targets ``B x T x C_out``."""
        windows = self._windows[indices]
        inputs = np.ascontiguousarray(windows[:, : self.lookback])
        targets = np.ascontiguousarray(windows[:, self.lookback :][..., list(self.target_channels)])
        return inputs, targets

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.batch(slice(None))


def make_windows(
    values: np.ndarray,
    range_: Range,
    lookback: int,
    horizon: int,
    target_channels: Optional[Sequence[int]] = None,
    stride: int = 1,
    norm_stats: Optional[NormStats] = None,
) -> WindowedDataset:
    """Windows inside ``range_`` of ``values``. ``None`` targets every channel.

    >>> len(make_windows(np.zeros((10, 2)), (0, 10), 4, 2))
    5
    """
    values = np.asarray(values, dtype=np.float64)
    _check_extent("lookback", lookback)
    _check_extent("horizon", horizon)
    start, end = range_
    if target_channels is None:
        target_channels = range(values.shape[1])
    return WindowedDataset(
        values=values[start:end],
        lookback=lookback,
        horizon=horizon,
        target_channels=tuple(target_channels),
        stride=stride,
        start=start,
        norm_stats=norm_stats,
    )


def window_count(n: int, lookback: int, horizon: int, stride: int = 1) -> int:
    """
    >>> window_count(10, 4, 2), window_count(10, 4, 2, stride=2), window_count(5, 4, 2)
    (5, 3, 0)
    """
    if n < lookback + horizon:
        return 0
    return (n - lookback - horizon) // stride + 1


@attr.s(auto_attribs=True, eq=False)
class TrainingData:
    train: WindowedDataset
    val: WindowedDataset


@attr.s(auto_attribs=True, eq=False)
class PreparedSeries:
    """A series split and standardized with its training statistics."""

    series: RawSeries
    ranges: SplitRanges
    values: np.ndarray
    norm_stats: NormStats
    target_channels: Tuple[int, ...]
    stride: int = 1

    @property
    def n_channels(self) -> int:
        return self.series.n_features

    @property
    def target_names(self) -> Tuple[str, ...]:
        return tuple(self.series.feature_names[c] for c in self.target_channels)

    def windows(self, split: str, lookback: int, horizon: int, stride: Optional[int] = None) -> WindowedDataset:
        return make_windows(
            self.values,
            self.ranges[split],
            lookback,
            horizon,
            self.target_channels,
            stride=self.stride if stride is None else stride,
            norm_stats=self.norm_stats,
        )

    def training_data(self, lookback: int, horizon: int) -> TrainingData:
        return TrainingData(
            train=self.windows("train", lookback, horizon),
            val=self.windows("val", lookback, horizon),
        )

    def fits(self, lookback: int, horizon: int) -> bool:
        """Whether every split holds at least one window."""
        return all(end - start >= lookback + horizon for start, end in self.ranges)


def prepare(
    series: RawSeries,
    spec: SplitSpec,
    target_channels: Optional[Sequence[int]] = None,
    stride: int = 1,
    window_length: int = 1,
) -> PreparedSeries:
    ranges = chronological_split(series, spec, window_length)
    values, stats = standardize(series.values, ranges.train, series.feature_names)
    if target_channels is None:
        target_channels = range(series.n_features)
    targets = tuple(target_channels)
    if not targets or min(targets) < 0 or max(targets) >= series.n_features:
        raise ConfigurationError(
            f"channels {targets} outside [0, {series.n_features})", field="target_channels"
        )
    return PreparedSeries(series, ranges, values, stats, targets, stride)
