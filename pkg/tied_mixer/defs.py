NORM_KINDS = frozenset(["layer", "batch"])
ACTIVATIONS = frozenset(["relu", "gelu"])

# Instance normalization and in-block normalization
NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.1

# Initialization
SLOT_INIT_STD = 0.02

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Trainer defaults
DEFAULT_MAX_EPOCHS = 100
DEFAULT_PATIENCE = 5

# Dropout tuning
DROPOUT_LOWER = 0.0
DROPOUT_UPPER = 0.5
HHO_POPULATION = 10
HHO_MAX_ITERATIONS = 20
HHO_FITNESS_EPOCHS = 10
LEVY_BETA = 1.5
LEVY_SCALE = 0.01
FITNESS_QUANTUM = 1e-12

HHO_BRANCHES = (
    "explore-random",
    "explore-mean",
    "soft",
    "hard",
    "soft-dive",
    "hard-dive",
)

# Structural search space
SEARCH_ROUNDS = (2, 4, 6, 8)
SEARCH_BLOCKS = (2, 4, 8)
SEARCH_SLOTS = (8, 16, 32, 64, 128, 256)
SEARCH_HIDDEN_DIM = (16, 2048)
SEARCH_LEARNING_RATE = (1e-4, 1e-2)
SEARCH_LOOKBACK = (4, 8, 16, 32, 64, 128, 256, 512, 1024)
SEARCH_BATCH_SIZE = (16, 32, 64)
SEARCH_NORM_KINDS = ("batch", "layer")
SEARCH_BUDGET = 20
SEARCH_MAX_RESAMPLES = 100

# Benchmark protocol
BENCHMARK_HORIZONS = (96, 192, 336, 720)
DEFAULT_SPLIT_FRACTIONS = (0.7, 0.1, 0.2)

_HOURS_PER_MONTH = 30 * 24
# 12/4/4 months of training/validation/test
ETT_HOURLY_BOUNDARIES = (
    12 * _HOURS_PER_MONTH,
    16 * _HOURS_PER_MONTH,
    20 * _HOURS_PER_MONTH,
)
ETT_MINUTE_BOUNDARIES = tuple(4 * b for b in ETT_HOURLY_BOUNDARIES)

# name -> (features, timesteps, split mode)
DATASET_PRESETS = {
    "traffic": (862, 17544, "fractions"),
    "electricity": (321, 26304, "fractions"),
    "etth1": (7, 17420, "ett-hourly"),
    "etth2": (7, 17420, "ett-hourly"),
    "ettm1": (7, 69680, "ett-minute"),
    "ettm2": (7, 69680, "ett-minute"),
}

CHECKPOINT_VERSION = 1
RESULT_COLUMNS = ("dataset", "horizon", "mse", "mae", "windows", "config_hash")
