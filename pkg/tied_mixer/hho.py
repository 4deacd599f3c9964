"""
Harris Hawks optimization of a scalar (the dropout rate) on ``[lower, upper]``.

Every sweep works on a snapshot of the population taken at its start: the
rabbit, the population mean and the random hawk of the exploration rule all
come from that snapshot. After the sweep the new positions are evaluated
and the rabbit becomes the best rate evaluated so far, including the
candidates tried by the dive rules.

Per hawk the random draws happen in this order: ``E0``; then either ``q``
followed by the random hawk index, ``r1``, ``r2`` (``q >= 0.5``) or ``r3``,
``r4``; or ``r`` followed by ``r5`` for the soft rules and, only when a dive
falls back to a Lévy step, ``r6`` and the Lévy draws.
"""

import json
import logging
import math
import threading
from concurrent.futures import Executor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import attr
import numpy as np
from scipy.special import gamma

from tied_mixer.autograd import Rng
from tied_mixer.defs import (
    DROPOUT_LOWER,
    DROPOUT_UPPER,
    FITNESS_QUANTUM,
    HHO_BRANCHES,
    HHO_FITNESS_EPOCHS,
    HHO_MAX_ITERATIONS,
    HHO_POPULATION,
    LEVY_BETA,
    LEVY_SCALE,
)
from tied_mixer.errors import ConfigurationError, ParameterError, TuningError
from tied_mixer.validators import in_range, non_negative, positive, to_float, to_int

FitnessFn = Callable[[float], float]


@attr.s(auto_attribs=True, frozen=True)
class HHOConfig:
    population: int = attr.ib(default=HHO_POPULATION, converter=to_int)
    max_iterations: int = attr.ib(default=HHO_MAX_ITERATIONS, converter=to_int, validator=positive)
    lower: float = attr.ib(
        default=DROPOUT_LOWER, converter=to_float, validator=in_range(0.0, 1.0, include_high=False)
    )
    upper: float = attr.ib(
        default=DROPOUT_UPPER, converter=to_float, validator=in_range(0.0, 1.0, include_high=False)
    )
    fitness_epochs: int = attr.ib(default=HHO_FITNESS_EPOCHS, converter=to_int, validator=positive)
    seed: int = attr.ib(default=0, converter=to_int, validator=non_negative)
    levy_beta: float = attr.ib(default=LEVY_BETA, converter=to_float, validator=in_range(0.3, 2.0))
    levy_scale: float = attr.ib(default=LEVY_SCALE, converter=to_float, validator=positive)

    @population.validator
    def _check_population(self, attribute, value):
        if value < 2:
            raise ConfigurationError(f"must be >= 2, got {value}", field=attribute.name)

    def __attrs_post_init__(self):
        if not self.lower < self.upper:
            raise ConfigurationError(
                f"lower bound {self.lower} must be below upper bound {self.upper}",
                field="lower",
            )


def clamp(value: float, lower: float, upper: float) -> float:
    """
    >>> clamp(-0.1, 0.0, 0.5), clamp(0.7, 0.0, 0.5), clamp(0.2, 0.0, 0.5)
    (0.0, 0.5, 0.2)
    """
    return float(min(max(value, lower), upper))


@attr.s(auto_attribs=True, eq=False)
class HawkPopulation:
    positions: np.ndarray
    fitness: np.ndarray
    rabbit: float
    rabbit_fitness: float
    lower: float = DROPOUT_LOWER
    upper: float = DROPOUT_UPPER

    @property
    def size(self) -> int:
        return len(self.positions)

    @property
    def mean(self) -> float:
        return float(np.mean(self.positions))

    def clamp(self, value: float) -> float:
        return clamp(value, self.lower, self.upper)

    def copy(self) -> "HawkPopulation":
        return attr.evolve(self, positions=self.positions.copy(), fitness=self.fitness.copy())


class FitnessCache:
    """Memoizes a fitness function on rates quantized to ``quantum``.

    >>> calls = []
    >>> cache = FitnessCache(lambda p: calls.append(p) or p * 2)
    >>> cache(0.1), cache(0.1 + 1e-14), len(calls), cache.hits
    (0.2, 0.2, 1, 1)
    """

    def __init__(self, fitness: FitnessFn, quantum: float = FITNESS_QUANTUM):
        self.fitness = fitness
        self.quantum = quantum
        self.entries: Dict[int, Tuple[float, float]] = {}
        self.hits = 0
        self._lock = threading.Lock()

    def key(self, rate: float) -> int:
        return int(round(rate / self.quantum))

    def __contains__(self, rate: float) -> bool:
        return self.key(rate) in self.entries

    def __call__(self, rate: float) -> float:
        key = self.key(rate)
        with self._lock:
            if key in self.entries:
                self.hits += 1
                return self.entries[key][1]
        value = float(self.fitness(rate))
        with self._lock:
            self.entries.setdefault(key, (float(rate), value))
            return self.entries[key][1]

    def evaluate_many(
        self, rates: Sequence[float], executor: Optional[Executor] = None
    ) -> List[float]:
        """Evaluate every distinct uncached rate once (in parallel when an
        executor is given) and return the fitness of each requested rate."""
        pending: Dict[int, float] = {}
        for rate in rates:
            key = self.key(rate)
            if key not in self.entries and key not in pending:
                pending[key] = float(rate)
        if executor is not None and len(pending) > 1:
            values = list(executor.map(self.fitness, pending.values()))
            with self._lock:
                for (key, rate), value in zip(pending.items(), values):
                    self.entries.setdefault(key, (rate, float(value)))
        return [self(rate) for rate in rates]

    @property
    def evaluations(self) -> int:
        return len(self.entries)

    def best(self) -> Tuple[float, float]:
        """The evaluated ``(rate, fitness)`` with the lowest fitness; the
        earliest evaluated wins ties."""
        return min(self.entries.values(), key=lambda entry: entry[1])


def _evaluate(fitness: FitnessFn, rate: float, hawk: Optional[int]) -> float:
    try:
        value = float(fitness(rate))
    except TuningError:
        raise
    except Exception as e:
        raise TuningError(f"fitness evaluation at rate {rate:.6g} failed: {e}", hawk=hawk) from e
    if math.isnan(value):
        raise TuningError(f"fitness at rate {rate:.6g} is NaN", hawk=hawk)
    return value


def escape_energy(t: float, max_iterations: int, rng: Rng) -> Tuple[float, float]:
    """``E = 2 E0 (1 - t / T_max)`` with ``E0`` uniform in ``(-1, 1)``."""
    if not 0 <= t <= max_iterations:
        raise ParameterError(f"iteration {t} outside [0, {max_iterations}]")
    e0 = float(rng.uniform(-1.0, 1.0))
    return 2.0 * e0 * (1.0 - t / max_iterations), e0


def levy(rng: Rng, beta: float = LEVY_BETA, scale: float = LEVY_SCALE, size=None):
    """Lévy-stable step by Mantegna's algorithm: ``scale * u / |v|^(1/beta)``
    with ``v ~ N(0, 1)`` and ``u ~ N(0, sigma_u^2)``."""
    sigma_u = (
        gamma(1 + beta)
        * math.sin(math.pi * beta / 2)
        / (gamma((1 + beta) / 2) * beta * 2 ** ((beta - 1) / 2))
    ) ** (1 / beta)
    u = rng.normal(0.0, sigma_u, size)
    v = rng.normal(0.0, 1.0, size)
    return scale * u / np.abs(v) ** (1 / beta)


def _explore(i: int, population: HawkPopulation, rng: Rng) -> Tuple[float, str]:
    lower, upper = population.lower, population.upper
    q = rng.random()
    if q >= 0.5:
        p_rand = float(population.positions[int(rng.integers(population.size))])
        r1, r2 = rng.random(), rng.random()
        p_i = float(population.positions[i])
        moved = p_rand - r1 * abs(p_rand - 2 * r2 * p_i)
        return population.clamp(moved), "explore-random"
    r3, r4 = rng.random(), rng.random()
    moved = (population.rabbit - population.mean) - r3 * (lower + r4 * (upper - lower))
    return population.clamp(moved), "explore-mean"


def explore_update(i: int, population: HawkPopulation, rng: Rng) -> float:
    """Exploration move of hawk ``i`` (used while ``|E| >= 1``)."""
    return _explore(i, population, rng)[0]


def soft_besiege(
    p_i: float,
    p_rabbit: float,
    energy: float,
    rng: Rng,
    lower: float = DROPOUT_LOWER,
    upper: float = DROPOUT_UPPER,
) -> float:
    jump = 2.0 * (1.0 - rng.random())
    return clamp(p_rabbit - energy * abs(jump * p_rabbit - p_i), lower, upper)


def hard_besiege(
    p_i: float,
    p_rabbit: float,
    energy: float,
    lower: float = DROPOUT_LOWER,
    upper: float = DROPOUT_UPPER,
) -> float:
    """
    >>> round(hard_besiege(0.4, 0.2, 0.4), 12), round(hard_besiege(0.4, 0.2, -0.4), 12)
    (0.12, 0.28)
    """
    return clamp(p_rabbit - energy * abs(p_rabbit - p_i), lower, upper)


def _dive(
    candidate: float,
    p_i: float,
    population: HawkPopulation,
    fitness: FitnessFn,
    rng: Rng,
    hawk: Optional[int],
    beta: float,
    scale: float,
) -> float:
    if _evaluate(fitness, candidate, hawk) < _evaluate(fitness, p_i, hawk):
        return candidate
    r6 = rng.random()
    return population.clamp(candidate + r6 * float(levy(rng, beta, scale)))


def soft_besiege_dive(
    p_i: float,
    population: HawkPopulation,
    energy: float,
    fitness: FitnessFn,
    rng: Rng,
    *,
    hawk: Optional[int] = None,
    beta: float = LEVY_BETA,
    scale: float = LEVY_SCALE,
) -> float:
    """Try the soft-besiege target; keep it only when strictly fitter than
    ``p_i``, otherwise take a Lévy step from it."""
    candidate = soft_besiege(p_i, population.rabbit, energy, rng, population.lower, population.upper)
    return _dive(candidate, p_i, population, fitness, rng, hawk, beta, scale)


def hard_besiege_dive(
    p_i: float,
    population: HawkPopulation,
    energy: float,
    fitness: FitnessFn,
    rng: Rng,
    *,
    hawk: Optional[int] = None,
    beta: float = LEVY_BETA,
    scale: float = LEVY_SCALE,
) -> float:
    """As ``soft_besiege_dive`` but aiming at ``rabbit - E |rabbit - mean|``."""
    candidate = population.clamp(
        population.rabbit - energy * abs(population.rabbit - population.mean)
    )
    return _dive(candidate, p_i, population, fitness, rng, hawk, beta, scale)


def move_hawk(
    i: int,
    population: HawkPopulation,
    t: int,
    config: HHOConfig,
    fitness: FitnessFn,
    rng: Rng,
) -> Tuple[float, str]:
    """New position of hawk ``i`` at iteration ``t`` and the rule used."""
    energy, _ = escape_energy(t, config.max_iterations, rng)
    if abs(energy) >= 1:
        return _explore(i, population, rng)
    p_i = float(population.positions[i])
    r = rng.random()
    soft = abs(energy) >= 0.5
    if r >= 0.5 and soft:
        return soft_besiege(p_i, population.rabbit, energy, rng, population.lower, population.upper), "soft"
    if r >= 0.5:
        return hard_besiege(p_i, population.rabbit, energy, population.lower, population.upper), "hard"
    dive = soft_besiege_dive if soft else hard_besiege_dive
    moved = dive(
        p_i, population, energy, fitness, rng,
        hawk=i, beta=config.levy_beta, scale=config.levy_scale,
    )
    return moved, "soft-dive" if soft else "hard-dive"


@attr.s(auto_attribs=True)
class HHOEvent:
    iteration: int
    hawk: int
    rate: float
    fitness: float
    branch: str


@attr.s(auto_attribs=True)
class HHOResult:
    best_rate: float
    best_fitness: float
    # Best fitness after initialization, then after every sweep
    trace: List[float]
    events: List[HHOEvent] = attr.Factory(list)
    branch_counts: Dict[str, int] = attr.Factory(dict)
    evaluations: int = 0
    cache_hits: int = 0


def run_hho(
    fitness: FitnessFn,
    config: HHOConfig,
    executor: Optional[Executor] = None,
) -> HHOResult:
    """Minimize ``fitness`` over ``[config.lower, config.upper]``.

    ``fitness`` must be deterministic; each distinct rate is evaluated once.
    With an ``executor`` the end-of-sweep evaluations run concurrently, which
    does not change the result.
    """
    rng = Rng(config.seed).child("hho")
    cache = FitnessCache(fitness)
    trace: List[float] = []
    events: List[HHOEvent] = []
    counts = {branch: 0 for branch in HHO_BRANCHES}

    def evaluate_all(rates):
        try:
            values = cache.evaluate_many(rates, executor)
            for rate, value in zip(rates, values):
                if math.isnan(value):
                    raise TuningError(f"fitness at rate {rate:.6g} is NaN")
            return values
        except TuningError as e:
            e.trace = list(trace)
            raise
        except Exception as e:
            raise TuningError(f"fitness evaluation failed: {e}", trace=trace) from e

    positions = rng.uniform(config.lower, config.upper, config.population)
    values = evaluate_all(positions)
    rabbit, rabbit_fitness = cache.best()
    population = HawkPopulation(
        positions, np.array(values), rabbit, rabbit_fitness, config.lower, config.upper
    )
    trace.append(rabbit_fitness)
    events.extend(
        HHOEvent(0, i, float(p), v, "init") for i, (p, v) in enumerate(zip(positions, values))
    )

    for t in range(config.max_iterations):
        snapshot = population.copy()
        moves = []
        for i in range(config.population):
            try:
                moves.append(move_hawk(i, snapshot, t, config, cache, rng))
            except TuningError as e:
                e.trace = list(trace)
                raise
        new_positions = np.array([p for p, _ in moves])
        if not ((new_positions >= config.lower) & (new_positions <= config.upper)).all():
            raise TuningError(f"positions left the bounds at iteration {t + 1}", trace=trace)
        values = evaluate_all(new_positions)
        for i, ((rate, branch), value) in enumerate(zip(moves, values)):
            counts[branch] += 1
            events.append(HHOEvent(t + 1, i, rate, value, branch))

        best_rate, best_fitness = cache.best()
        if best_fitness < population.rabbit_fitness:
            rabbit, rabbit_fitness = best_rate, best_fitness
        population = HawkPopulation(
            new_positions, np.array(values), rabbit, rabbit_fitness, config.lower, config.upper
        )
        trace.append(rabbit_fitness)
        logging.info(
            f"HHO sweep {t + 1}/{config.max_iterations}: best rate {rabbit:.6f}, "
            f"fitness {rabbit_fitness:.6g}"
        )

    return HHOResult(
        best_rate=rabbit,
        best_fitness=rabbit_fitness,
        trace=trace,
        events=events,
        branch_counts=counts,
        evaluations=cache.evaluations,
        cache_hits=cache.hits,
    )


def write_trace(events: Sequence[HHOEvent], path: Union[str, Path]):
    """One JSON record per hawk evaluation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wt", encoding="utf8") as f:
        for event in events:
            f.write(json.dumps(attr.asdict(event), sort_keys=True) + "\n")
