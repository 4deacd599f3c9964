__version__ = "0.1.0"
from .checkpoint import Checkpoint  # noqa: F401
from .data import load_csv, prepare  # noqa: F401
from .errors import (  # noqa: F401
    ConfigurationError,
    ContractError,
    DataError,
    TiedMixerError,
)
from .hho import HHOConfig, run_hho  # noqa: F401
from .model import Forecaster, ModelConfig  # noqa: F401
from .search import SearchSpace, run_search  # noqa: F401
from .trainer import TrainConfig, train  # noqa: F401
