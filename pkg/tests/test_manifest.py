import os

import pytest

from tied_mixer.errors import ConfigurationError
from tied_mixer.manifest import (
    DatasetManifest,
    RunManifest,
    architecture_entries,
    format_key_values,
    load_dataset,
    parse_key_values,
    parse_split,
    read_key_values,
    write_key_values,
)

from .utils import write_synthetic_run


def test_parse_key_values():
    text = "# dataset\nname = etth1\n\nsplit = fractions: 0.6, 0.2, 0.2  # custom\n  horizon=96\n"
    assert parse_key_values(text) == {
        "name": "etth1",
        "split": "fractions: 0.6, 0.2, 0.2",
        "horizon": "96",
    }


@pytest.mark.parametrize(
    ["text", "message"],
    [["a = 1\nb\n", "line 2"], ["= 1\n", "empty key"], ["a = 1\na = 2\n", "duplicated"]],
)
def test_malformed_manifests(text, message):
    with pytest.raises(ConfigurationError) as e:
        parse_key_values(text)
    assert message in str(e.value)


def test_format_skips_missing_values():
    assert format_key_values({"a": 1, "b": None, "c": (4, 8)}) == "a = 1\nc = 4, 8\n"


def test_missing_manifest(tmp_path):
    with pytest.raises(ConfigurationError) as e:
        read_key_values(tmp_path / "nope.manifest")
    assert e.value.field == "manifest"


@pytest.mark.parametrize("value", ["thirds", "fractions: a, b, c", "indices: 1, 2", "fractions: 0.5, 0.5, 0.5"])
def test_invalid_split(value):
    with pytest.raises(ConfigurationError):
        parse_split(value)


def test_preset_split():
    assert parse_split("preset", "ETTm2").boundaries == (34560, 46080, 57600)
    assert parse_split("preset", "traffic").fractions == (0.7, 0.1, 0.2)


def test_run_manifest(tmp_path):
    run = RunManifest.from_file(write_synthetic_run(tmp_path))
    assert run.dataset.name == "sines"
    assert run.dataset.path == tmp_path / "series.csv"
    assert run.architecture.n_rounds == 2 and run.architecture.n_blocks == 1
    assert run.train.max_epochs == 2 and run.train.batch_size == 16
    assert run.hho.population == 2 and run.search.budget == 2
    assert run.search.lookback == (4, 8)
    assert run.output_dir == tmp_path / "out"
    assert run.seed == run.train.seed == run.hho.seed == 0
    assert run.lookback() == 8 and run.lookback_pinned

    prepared = run.load()
    assert prepared.n_channels == 3 and prepared.target_channels == (0, 1, 2)
    config = run.model_config(prepared)
    assert (config.lookback, config.horizon, config.n_slots, config.hidden_dim) == (8, 4, 4, 8)


def test_seed_and_output_overrides(tmp_path):
    path = write_synthetic_run(tmp_path, run={"run.seed": 3})
    assert RunManifest.from_file(path).train.seed == 3
    run = RunManifest.from_file(path, seed=11, output_dir=tmp_path / "elsewhere")
    assert run.seed == run.train.seed == run.hho.seed == 11
    assert run.output_dir == tmp_path / "elsewhere"


@pytest.mark.parametrize(
    ["run", "field"],
    [
        [{"model.n_roundz": 2}, "model.n_roundz"],
        [{"train.learning_rate": "fast"}, "train.learning_rate"],
        [{"model.norm_kind": "group"}, "model.norm_kind"],
        [{"hho.population": 1}, "hho.population"],
        [{"model.lookback": 16}, "model.lookback"],
        [{"run.seed": -1}, "run.seed"],
    ],
)
def test_invalid_run_entries(tmp_path, run, field):
    with pytest.raises(ConfigurationError) as e:
        RunManifest.from_file(write_synthetic_run(tmp_path, run=run))
    assert e.value.field == field
    assert field in str(e.value)


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigurationError) as e:
        RunManifest.from_file(write_synthetic_run(tmp_path, run={"model.n_roundz": 2}))
    assert "unknown key" in str(e.value)


def test_missing_dataset_file(tmp_path):
    with pytest.raises(ConfigurationError) as e:
        RunManifest.from_file(write_synthetic_run(tmp_path, dataset={"path": "missing.csv"}))
    assert e.value.field == "path"
    assert "missing.csv" in str(e.value)


def test_missing_dataset_manifest_entry(tmp_path):
    path = tmp_path / "run.manifest"
    write_key_values(path, {"model.n_rounds": 2})
    with pytest.raises(ConfigurationError) as e:
        RunManifest.from_file(path)
    assert e.value.field == "data.manifest"


def test_lookback_from_the_run_manifest(tmp_path):
    path = write_synthetic_run(tmp_path, dataset={"lookback": None}, run={"model.lookback": 12})
    run = RunManifest.from_file(path)
    assert run.lookback() == 12 and not run.lookback_pinned
    assert run.model_config(run.load()).lookback == 12


def test_no_lookback_anywhere(tmp_path):
    run = RunManifest.from_file(write_synthetic_run(tmp_path, dataset={"lookback": None}))
    assert run.optional_lookback() is None
    with pytest.raises(ConfigurationError):
        run.lookback()


def test_target_channels_by_name(tmp_path):
    write_synthetic_run(tmp_path, dataset={"target_channels": "s0, s2"})
    dataset, prepared = load_dataset(tmp_path / "sines.manifest")
    assert isinstance(dataset, DatasetManifest)
    assert prepared.target_channels == (0, 2)
    assert prepared.target_names == ("s0", "s2")


def test_load_dataset_from_a_run_manifest(tmp_path):
    dataset, prepared = load_dataset(write_synthetic_run(tmp_path))
    assert dataset.name == "sines"
    assert prepared.ranges.test == (160, 200)


def test_derived_manifest_reloads_from_another_directory(tmp_path):
    run = RunManifest.from_file(write_synthetic_run(tmp_path / "base"))
    target = tmp_path / "derived" / "best.manifest"
    write_key_values(target, run.derive(architecture_entries(run.architecture), target.parent))

    reloaded = RunManifest.from_file(target)
    assert reloaded.architecture == run.architecture
    assert reloaded.dataset.name == run.dataset.name
    assert reloaded.dataset.path.resolve() == run.dataset.path.resolve()
    assert reloaded.output_dir.resolve() == run.output_dir.resolve()


def test_derive_applies_updates(tmp_path):
    run = RunManifest.from_file(write_synthetic_run(tmp_path))
    target = tmp_path / "derived" / "tuned.manifest"
    updates = {"model.dropout_rate": 0.25, "train.learning_rate": 0.003}
    write_key_values(target, run.derive(updates, target.parent))
    reloaded = RunManifest.from_file(target)
    assert reloaded.architecture.dropout_rate == 0.25
    assert reloaded.train.learning_rate == 0.003
    assert reloaded.architecture.n_rounds == run.architecture.n_rounds
    assert reloaded.search == run.search


def test_derive_keeps_relative_paths_in_the_same_directory(tmp_path):
    path = write_synthetic_run(tmp_path)
    run = RunManifest.from_file(path)
    derived = run.derive({"model.dropout_rate": 0.1})
    assert derived == dict(read_key_values(path), **{"model.dropout_rate": 0.1})

    moved = run.derive({}, tmp_path / "out")
    assert moved["data.manifest"] == os.path.join("..", "sines.manifest")
    assert moved["run.output_dir"] == "."
