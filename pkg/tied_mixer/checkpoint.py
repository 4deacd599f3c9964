"""
Checkpoints are JSON documents holding the model configuration, every
parameter tensor and buffer by name with its shape, and the training
statistics needed to serve forecasts in raw units. Floats are written with
``repr`` precision, so reloading is bit-exact.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import attr
import numpy as np

from tied_mixer.autograd import Rng
from tied_mixer.data import NormStats
from tied_mixer.defs import CHECKPOINT_VERSION
from tied_mixer.errors import DataError
from tied_mixer.model import Forecaster, ModelConfig


@attr.s(auto_attribs=True, eq=False)
class Checkpoint:
    model: Forecaster
    norm_stats: Optional[NormStats] = None
    feature_names: Optional[Tuple[str, ...]] = None
    metadata: Dict[str, Any] = attr.Factory(dict)

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    @property
    def target_names(self) -> Optional[Tuple[str, ...]]:
        if self.feature_names is None:
            return None
        return tuple(self.feature_names[c] for c in self.config.target_channels)

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1), encoding="utf8")

    def to_dict(self) -> dict:
        params = self.model.params
        document: Dict[str, Any] = {
            "version": CHECKPOINT_VERSION,
            "config": attr.asdict(self.config, retain_collection_types=False),
            "tensors": {name: _encode(t.data) for name, t in params.named_tensors()},
            "buffers": {name: _encode(value) for name, value in params.named_buffers()},
            "metadata": self.metadata,
        }
        if self.norm_stats is not None:
            document["norm_stats"] = {
                "mean": _encode(self.norm_stats.mean),
                "std": _encode(self.norm_stats.std),
            }
        if self.feature_names is not None:
            document["feature_names"] = list(self.feature_names)
        return document

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        path = Path(path)
        try:
            document = json.loads(path.read_text(encoding="utf8"))
        except FileNotFoundError:
            raise DataError(f"{path}: checkpoint does not exist") from None
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: not a checkpoint ({e})") from None
        checkpoint = cls.from_dict(document, source=str(path))
        logging.info(f"Loaded checkpoint {path} ({checkpoint.model.parameter_count()} parameters)")
        return checkpoint

    @classmethod
    def from_dict(cls, document: dict, source: str = "checkpoint") -> "Checkpoint":
        version = document.get("version")
        if version != CHECKPOINT_VERSION:
            raise DataError(
                f"{source}: unsupported checkpoint version {version!r}, "
                f"expected {CHECKPOINT_VERSION}"
            )
        try:
            config = ModelConfig(**document["config"])
            model = Forecaster.initialize(config, Rng(0))
            state = {name: _decode(v) for name, v in document["tensors"].items()}
            state.update((name, _decode(v)) for name, v in document.get("buffers", {}).items())
            model.params.restore(state)
        except KeyError as e:
            raise DataError(f"{source}: missing entry {e}") from None
        norm_stats = None
        if "norm_stats" in document:
            norm_stats = NormStats(
                _decode(document["norm_stats"]["mean"]), _decode(document["norm_stats"]["std"])
            )
        names = document.get("feature_names")
        return cls(
            model=model,
            norm_stats=norm_stats,
            feature_names=tuple(names) if names is not None else None,
            metadata=document.get("metadata", {}),
        )


def _encode(array: np.ndarray) -> dict:
    array = np.asarray(array, dtype=np.float64)
    return {"shape": list(array.shape), "data": [float(v) for v in array.ravel()]}


def _decode(entry: dict) -> np.ndarray:
    return np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
