import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tied_mixer.data import (
    RawSeries,
    SplitSpec,
    chronological_split,
    load_csv,
    make_windows,
    prepare,
    standardize,
    window_count,
)
from tied_mixer.errors import ConfigurationError, IngestError


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf8")
    return path


def test_load_csv_with_header(tmp_path):
    path = _write(tmp_path, "a,b\n1,2\n3,4\n5,6.5\n")
    series = load_csv(path)
    assert series.values.tolist() == [[1.0, 2.0], [3.0, 4.0], [5.0, 6.5]]
    assert series.feature_names == ("a", "b")
    assert series.timestamps is None


def test_load_csv_without_header(tmp_path):
    series = load_csv(_write(tmp_path, "1,2\n3,4\n"), has_header=False)
    assert series.feature_names == ("col0", "col1")
    assert series.values.shape == (2, 2)


def test_load_ett_style_file(tmp_path):
    names = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"]
    rows = [
        f"2016-07-01 0{h}:00:00," + ",".join(str(h + i / 10) for i in range(7))
        for h in range(4)
    ]
    path = _write(tmp_path, "date," + ",".join(names) + "\n" + "\n".join(rows) + "\n")
    series = load_csv(path, date_column="date")
    assert series.feature_names == tuple(names)
    assert series.n_features == 7
    assert series.timestamps[0] == "2016-07-01 00:00:00"
    assert series.values[2, 6] == pytest.approx(2.6)


def test_unparseable_cell_names_its_row(tmp_path):
    rows = ["1,2"] * 4 + ["1,abc"] + ["1,2"]
    path = _write(tmp_path, "a,b\n" + "\n".join(rows) + "\n")
    with pytest.raises(IngestError) as e:
        load_csv(path)
    assert e.value.row == 5
    assert e.value.column == "b"
    assert "row 5" in str(e.value)


@pytest.mark.parametrize("text", ["a,b\n1,2\n3,4,5\n6,7\n", "a,b,c\n1,2,3\n4,5\n6,7,8\n"])
def test_ragged_rows(tmp_path, text):
    with pytest.raises(IngestError):
        load_csv(_write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(IngestError):
        load_csv(tmp_path / "nope.csv")


def test_raw_series_needs_two_steps():
    with pytest.raises(IngestError):
        RawSeries([[1.0, 2.0]], ["a", "b"])


@pytest.mark.parametrize(
    ["n", "spec", "expected"],
    [
        [100, SplitSpec(fractions=(0.7, 0.1, 0.2)), [(0, 70), (70, 80), (80, 100)]],
        [17420, SplitSpec.ett_hourly(), [(0, 8640), (8640, 11520), (11520, 14400)]],
        [69680, SplitSpec.ett_minute(), [(0, 34560), (34560, 46080), (46080, 57600)]],
        [50, SplitSpec(boundaries=(30, 40, 50)), [(0, 30), (30, 40), (40, 50)]],
    ],
)
def test_chronological_split(n, spec, expected):
    assert list(chronological_split(n, spec)) == expected


def test_empty_test_split_is_rejected():
    with pytest.raises(ConfigurationError):
        chronological_split(100, SplitSpec(fractions=(0.5, 0.5, 0.0)))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"fractions": (0.7, 0.2, 0.2)},
        {"boundaries": (10, 10, 20)},
        {},
        {"fractions": (0.7, 0.1, 0.2), "boundaries": (1, 2, 3)},
    ],
)
def test_invalid_split_specs(kwargs):
    with pytest.raises(ConfigurationError):
        SplitSpec(**kwargs)


def test_split_shorter_than_window():
    with pytest.raises(ConfigurationError):
        chronological_split(100, SplitSpec.default(), window_length=11)


def test_boundaries_beyond_the_series():
    with pytest.raises(ConfigurationError):
        chronological_split(100, SplitSpec(boundaries=(50, 80, 120)))


def test_standardize_uses_training_range_only():
    values = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [100.0, 9.0]])
    z, stats = standardize(values, (0, 3))
    assert stats.mean.tolist() == [2.0, 5.0]
    assert stats.std[0] == pytest.approx(np.sqrt(2 / 3))
    assert z[1, 0] == 0.0
    # constant feature: std clamped to 1
    assert stats.std[1] == 1.0 and z[:3, 1].tolist() == [0.0, 0.0, 0.0]
    np.testing.assert_allclose(stats.invert(z), values, atol=1e-12)


def test_window_count_example():
    dataset = make_windows(np.zeros((10, 2)), (0, 10), 4, 2)
    assert len(dataset) == 5
    inputs, targets = dataset.arrays()
    assert inputs.shape == (5, 4, 2) and targets.shape == (5, 2, 2)


def test_windows_select_target_channels():
    dataset = make_windows(np.arange(30.0).reshape(10, 3), (0, 10), 4, 2, target_channels=[2])
    _, target = dataset[0]
    assert target.tolist() == [[14.0], [17.0]]


@pytest.mark.parametrize("k", np.random.default_rng(0).choice(89, 20, replace=False).tolist())
def test_window_targets_follow_inputs(k):
    ramp = np.arange(200.0)[:, None] * np.array([1.0, -1.0])
    start = 50
    dataset = make_windows(ramp, (start, 150), 8, 4)
    inputs, target = dataset[int(k)]
    assert inputs[:, 0].tolist() == list(np.arange(start + k, start + k + 8.0))
    assert target[:, 0].tolist() == list(np.arange(start + k + 8, start + k + 12.0))
    assert dataset.window_start(int(k)) == start + k


@pytest.mark.parametrize(["lookback", "horizon"], [[0, 2], [4, 0], [-1, 3]])
def test_window_extents_must_be_positive(lookback, horizon):
    with pytest.raises(ConfigurationError):
        make_windows(np.zeros((10, 2)), (0, 10), lookback, horizon)


@given(
    n=st.integers(1, 300),
    lookback=st.integers(1, 40),
    horizon=st.integers(1, 20),
    stride=st.integers(1, 5),
)
def test_window_count_law(n, lookback, horizon, stride):
    expected = window_count(n, lookback, horizon, stride)
    if n < lookback + horizon:
        assert expected == 0
        with pytest.raises(ConfigurationError):
            make_windows(np.zeros((n, 1)), (0, n), lookback, horizon, stride=stride)
    else:
        dataset = make_windows(np.zeros((n, 1)), (0, n), lookback, horizon, stride=stride)
        assert len(dataset) == expected == (n - lookback - horizon) // stride + 1


def test_prepare_keeps_splits_apart():
    series = RawSeries(np.arange(400.0).reshape(200, 2), ["x", "y"])
    prepared = prepare(series, SplitSpec.default(), window_length=12)
    train = prepared.windows("train", 8, 4)
    val = prepared.windows("val", 8, 4)
    last_train_target = train.window_start(len(train) - 1) + 8 + 4
    assert last_train_target <= val.window_start(0)
    np.testing.assert_allclose(prepared.values[:140].mean(axis=0), 0.0, atol=1e-12)
    assert prepared.fits(8, 4) and not prepared.fits(16, 8)


def test_prepare_rejects_unknown_targets():
    series = RawSeries(np.zeros((100, 2)) + np.arange(100.0)[:, None], ["x", "y"])
    with pytest.raises(ConfigurationError):
        prepare(series, SplitSpec.default(), target_channels=[2])
