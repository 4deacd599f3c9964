"""
Manifest files: flat ``key = value`` text, one entry per line, ``#`` starts
a comment.

A dataset manifest describes one CSV file and how to cut it::

    name = etth1
    path = ETTh1.csv
    date_column = date
    split = preset
    lookback = 512
    horizon = 96
    target_channels = all

A run manifest points at a dataset manifest and sets the model, training,
tuning and search options with section prefixes::

    data.manifest = etth1.manifest
    model.n_rounds = 2
    train.learning_rate = 0.001
    hho.population = 10
    search.budget = 20
    run.output_dir = runs/etth1
    run.seed = 0

Unknown keys are rejected. Relative paths are resolved against the
directory of the manifest that names them.
"""

import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import attr

from tied_mixer.data import PreparedSeries, SplitSpec, load_csv, prepare
from tied_mixer.errors import ConfigurationError, TiedMixerError
from tied_mixer.hho import HHOConfig
from tied_mixer.model import Architecture, ModelConfig
from tied_mixer.search import SearchSpace
from tied_mixer.trainer import TrainConfig
from tied_mixer.validators import (
    optional_positive,
    positive,
    to_bool,
    to_int,
    to_optional_int,
)


def parse_key_values(text: str, source: str = "manifest") -> Dict[str, str]:
    """
    >>> parse_key_values("# comment\\na = 1\\nb=x, y  # trailing\\n")
    {'a': '1', 'b': 'x, y'}
    """
    entries: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigurationError(f"{source}, line {number}: expected 'key = value'")
        key, value = (part.strip() for part in content.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}, line {number}: empty key")
        if key in entries:
            raise ConfigurationError(f"{source}, line {number}: duplicated key", field=key)
        entries[key] = value
    return entries


def read_key_values(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"manifest {path} does not exist", field="manifest")
    return parse_key_values(path.read_text(encoding="utf8"), source=str(path))


def format_key_values(entries: Dict[str, Any]) -> str:
    lines = []
    for key, value in entries.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_key_values(path: Union[str, Path], entries: Dict[str, Any]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_key_values(entries), encoding="utf8")


def _check_keys(entries: Dict[str, str], allowed: Iterable[str], source: str):
    allowed = set(allowed)
    for key in entries:
        if key not in allowed:
            raise ConfigurationError(f"unknown key in {source}", field=key)


def _build(cls, entries: Dict[str, str], prefix: str = "", **extra):
    """Instantiate an attrs config class from the entries under ``prefix``,
    naming the manifest key of any value that fails conversion or
    validation."""
    kwargs = dict(extra)
    kwargs.update({key[len(prefix):]: value for key, value in entries.items() if key.startswith(prefix)})
    fields = attr.fields_dict(cls)
    for name, value in kwargs.items():
        converter = fields[name].converter
        if converter is None:
            continue
        try:
            converter(value)
        except ConfigurationError as e:
            raise ConfigurationError(str(e), field=prefix + name) from None
    try:
        return cls(**kwargs)
    except ConfigurationError as e:
        if e.field is not None and not e.field.startswith(prefix):
            message = str(e).replace(f"{e.field}:", "", 1).strip()
            raise ConfigurationError(message, field=prefix + e.field) from None
        raise


def parse_split(value: str, name: str = "") -> SplitSpec:
    """
    >>> parse_split("fractions: 0.6, 0.2, 0.2").fractions
    (0.6, 0.2, 0.2)
    >>> parse_split("indices: 10, 20, 30").boundaries
    (10, 20, 30)
    >>> parse_split("ett-hourly").boundaries
    (8640, 11520, 14400)
    """
    text = value.strip().lower()
    if text == "preset":
        return SplitSpec.for_preset(name)
    if text == "ett-hourly":
        return SplitSpec.ett_hourly()
    if text == "ett-minute":
        return SplitSpec.ett_minute()
    mode, _, numbers = text.partition(":")
    try:
        parts = [p.strip() for p in numbers.split(",")]
        if mode.strip() == "fractions":
            return SplitSpec(fractions=tuple(float(p) for p in parts))
        if mode.strip() == "indices":
            return SplitSpec(boundaries=tuple(int(p) for p in parts))
    except ValueError:
        pass
    raise ConfigurationError(
        f"expected 'fractions: a, b, c', 'indices: i, j, k', 'preset', "
        f"'ett-hourly' or 'ett-minute'; got {value!r}",
        field="split",
    )


def _channels(value: str) -> Optional[Tuple[str, ...]]:
    text = value.strip()
    if text.lower() == "all":
        return None
    channels = tuple(v.strip() for v in text.split(",") if v.strip())
    if not channels:
        raise ConfigurationError("no channels given", field="target_channels")
    return channels


@attr.s(auto_attribs=True, frozen=True)
class DatasetManifest:
    name: str
    path: Path = attr.ib(converter=Path)
    horizon: int = attr.ib(converter=to_int, validator=positive)
    has_header: bool = attr.ib(default=True, converter=to_bool)
    date_column: Optional[str] = None
    split: str = "fractions: 0.7, 0.1, 0.2"
    lookback: Optional[int] = attr.ib(
        default=None, converter=to_optional_int, validator=optional_positive
    )
    # "all", or comma-separated feature names or column positions
    target_channels: str = "all"
    stride: int = attr.ib(default=1, converter=to_int, validator=positive)

    def __attrs_post_init__(self):
        self.split_spec()
        _channels(self.target_channels)

    def split_spec(self) -> SplitSpec:
        return parse_split(self.split, self.name)

    @classmethod
    def from_entries(cls, entries: Dict[str, str], base_dir: Path, source: str = "manifest") -> "DatasetManifest":
        _check_keys(entries, attr.fields_dict(cls), source)
        for required in ("name", "path", "horizon"):
            if not entries.get(required):
                raise ConfigurationError(f"missing required entry in {source}", field=required)
        path = Path(entries["path"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigurationError(f"{source}: dataset file {path} does not exist", field="path")
        return _build(cls, dict(entries, path=str(path)))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "DatasetManifest":
        path = Path(path)
        return cls.from_entries(read_key_values(path), path.parent, str(path))

    def entries(self) -> Dict[str, Any]:
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in attr.asdict(self).items()}

    def load(self, window_length: int = 1) -> PreparedSeries:
        """Read, split and standardize the dataset."""
        series = load_csv(self.path, self.has_header, self.date_column)
        names = _channels(self.target_channels)
        if names is None:
            targets: Tuple[int, ...] = tuple(range(series.n_features))
        elif all(n.isdigit() for n in names):
            targets = tuple(int(n) for n in names)
        else:
            targets = series.channel_indices(names)
        return prepare(series, self.split_spec(), targets, self.stride, window_length)


_SECTIONS = {
    "model.": Architecture,
    "train.": TrainConfig,
    "hho.": HHOConfig,
    "search.": SearchSpace,
}
_RUN_KEYS = ("data.manifest", "run.output_dir", "run.seed")


@attr.s(auto_attribs=True, frozen=True)
class RunManifest:
    dataset: DatasetManifest
    architecture: Architecture
    train: TrainConfig
    hho: HHOConfig
    search: SearchSpace
    output_dir: Path
    seed: int
    # The entries as read, used to derive new manifests
    entries: Dict[str, str] = attr.ib(factory=dict, eq=False)
    path: Optional[Path] = attr.ib(default=None, eq=False)

    @classmethod
    def from_file(
        cls,
        path: Union[str, Path],
        seed: Optional[int] = None,
        output_dir: Optional[Union[str, Path]] = None,
    ) -> "RunManifest":
        path = Path(path)
        entries = read_key_values(path)
        allowed = set(_RUN_KEYS)
        for prefix, config_cls in _SECTIONS.items():
            allowed.update(prefix + name for name in attr.fields_dict(config_cls))
        _check_keys(entries, allowed, str(path))
        if not entries.get("data.manifest"):
            raise ConfigurationError(f"missing required entry in {path}", field="data.manifest")

        data_path = Path(entries["data.manifest"])
        if not data_path.is_absolute():
            data_path = path.parent / data_path
        if not data_path.is_file():
            raise ConfigurationError(
                f"dataset manifest {data_path} does not exist", field="data.manifest"
            )
        try:
            dataset = DatasetManifest.from_file(data_path)
        except ConfigurationError as e:
            raise ConfigurationError(f"{data_path}: {e}", field=e.field) from None

        run_seed = _build_seed(entries, seed)
        architecture = _build(Architecture, entries, "model.")
        train = _build(TrainConfig, entries, "train.", seed=run_seed)
        hho = _build(HHOConfig, entries, "hho.", seed=run_seed)
        if seed is not None:
            train, hho = attr.evolve(train, seed=seed), attr.evolve(hho, seed=seed)
        search = _build(SearchSpace, entries, "search.")

        out = Path(output_dir) if output_dir is not None else Path(entries.get("run.output_dir", "runs"))
        if output_dir is None and not out.is_absolute():
            out = path.parent / out

        manifest = cls(dataset, architecture, train, hho, search, out, run_seed, entries, path)
        manifest.optional_lookback()
        return manifest

    def optional_lookback(self) -> Optional[int]:
        dataset, model = self.dataset.lookback, self.architecture.lookback
        if dataset is not None and model is not None and dataset != model:
            raise ConfigurationError(
                f"model lookback {model} differs from the dataset's {dataset}",
                field="model.lookback",
            )
        return dataset if dataset is not None else model

    def lookback(self) -> int:
        lookback = self.optional_lookback()
        if lookback is None:
            raise ConfigurationError(
                "no lookback in the run or dataset manifest", field="model.lookback"
            )
        return lookback

    @property
    def lookback_pinned(self) -> bool:
        return self.dataset.lookback is not None

    def load(self) -> PreparedSeries:
        lookback = self.optional_lookback()
        return self.dataset.load((lookback or 1) + self.dataset.horizon)

    def model_config(self, prepared: PreparedSeries, architecture: Optional[Architecture] = None) -> ModelConfig:
        architecture = architecture or self.architecture
        lookback = architecture.lookback if architecture.lookback is not None else self.lookback()
        return architecture.model_config(
            horizon=self.dataset.horizon,
            n_channels=prepared.n_channels,
            target_channels=prepared.target_channels,
            lookback=lookback,
        )

    def derive(
        self, updates: Dict[str, Any], directory: Optional[Union[str, Path]] = None
    ) -> Dict[str, Any]:
        """The entries as read with ``updates`` applied, for a manifest
        written into ``directory`` (this manifest's own directory when
        ``None``). The dataset manifest and output paths keep their text
        unless they would point elsewhere from ``directory``; then they are
        rewritten relative to it."""
        base = self._base_dir()
        directory = Path(directory) if directory is not None else base
        derived: Dict[str, Any] = dict(self.entries)
        derived["data.manifest"] = _relocate(
            self.entries.get("data.manifest"), self.dataset_manifest_path(), base, directory
        )
        derived["run.output_dir"] = _relocate(
            self.entries.get("run.output_dir"), self.output_dir, base, directory
        )
        derived.update(updates)
        return derived

    def _base_dir(self) -> Path:
        return self.path.parent if self.path is not None else Path.cwd()

    def dataset_manifest_path(self) -> Path:
        data_path = Path(self.entries["data.manifest"])
        if not data_path.is_absolute():
            data_path = self._base_dir() / data_path
        return data_path.resolve()


def _relocate(original: Optional[str], target: Path, base: Path, directory: Path) -> str:
    """Path text for ``target`` as seen from ``directory``.

    >>> _relocate("data.manifest", Path("/runs/data.manifest"), Path("/runs"), Path("/runs"))
    'data.manifest'
    >>> _relocate("data.manifest", Path("/runs/data.manifest"), Path("/runs"), Path("/runs/out"))
    '../data.manifest'
    """
    target = target.resolve()
    if original is not None and (base / original).resolve() == target:
        if Path(original).is_absolute() or base.resolve() == directory.resolve():
            return original
    try:
        return os.path.relpath(target, directory.resolve())
    except ValueError:
        return str(target)


def _build_seed(entries: Dict[str, str], seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    try:
        value = to_int(entries.get("run.seed", 0))
    except TiedMixerError:
        raise ConfigurationError(f"expected an integer, got {entries.get('run.seed')!r}", field="run.seed") from None
    if value < 0:
        raise ConfigurationError(f"must be >= 0, got {value}", field="run.seed")
    return value


def architecture_entries(architecture: Architecture) -> Dict[str, Any]:
    return {f"model.{k}": v for k, v in attr.asdict(architecture).items()}


def load_dataset(path: Union[str, Path]) -> Tuple[DatasetManifest, PreparedSeries]:
    """Load a dataset from a dataset manifest or a run manifest."""
    path = Path(path)
    entries = read_key_values(path)
    if "data.manifest" in entries:
        run = RunManifest.from_file(path)
        return run.dataset, run.load()
    dataset = DatasetManifest.from_entries(entries, path.parent, str(path))
    window = (dataset.lookback or 0) + dataset.horizon
    return dataset, dataset.load(window)
