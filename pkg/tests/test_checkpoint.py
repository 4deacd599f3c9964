import json

import numpy as np
import pytest

from tied_mixer.autograd import Rng
from tied_mixer.checkpoint import Checkpoint
from tied_mixer.data import NormStats
from tied_mixer.errors import DataError
from tied_mixer.model import Forecaster

from .utils import tiny_config


@pytest.mark.parametrize("norm_kind", ["layer", "batch"])
def test_round_trip_is_bit_exact(tmp_path, norm_kind):
    config = tiny_config(norm_kind=norm_kind, target_channels=(0, 2), dropout_rate=0.1)
    model = Forecaster.initialize(config, Rng(0))
    x = Rng(1).normal(size=(6, config.lookback, config.n_channels))
    # moves the running statistics away from their initial values
    model(x, training=True, rng=Rng(2))
    stats = NormStats(Rng(3).normal(size=3), Rng(4).uniform(0.5, 2.0, 3))
    checkpoint = Checkpoint(model, stats, ("a", "b", "c"), {"dataset": "sines"})
    checkpoint.save(tmp_path / "checkpoint.json")

    loaded = Checkpoint.load(tmp_path / "checkpoint.json")
    assert loaded.config == config
    assert loaded.target_names == ("a", "c")
    assert loaded.metadata == {"dataset": "sines"}
    assert loaded.norm_stats.mean.tolist() == stats.mean.tolist()
    original, restored = model.params.snapshot(), loaded.model.params.snapshot()
    assert original.keys() == restored.keys()
    assert all(np.array_equal(original[k], restored[k]) for k in original)
    assert loaded.model.predict(x).tolist() == model.predict(x).tolist()


def test_unknown_version(tmp_path):
    model = Forecaster.initialize(tiny_config(), Rng(0))
    document = Checkpoint(model).to_dict()
    document["version"] = 99
    path = tmp_path / "checkpoint.json"
    path.write_text(json.dumps(document))
    with pytest.raises(DataError) as e:
        Checkpoint.load(path)
    assert "version" in str(e.value)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DataError):
        Checkpoint.load(tmp_path / "missing.json")
