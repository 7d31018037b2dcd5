"""Sparrow swarm optimizer (velocity/position form) and hyperparameter tuning.

Each sparrow ``i`` carries a position ``x``, velocity ``v`` and personal best
``p``. One iteration, with ``g`` the global best at the start of it::

    v <- alpha * v + beta * r1 * (g - x) + gamma * r2 * (p - x)
    x <- clamp(x + v)                  # clamped components get v = 0
    p <- x        if f(x) < f(p)       # strict
    g <- argmin over personal bests    # never worsens

``r1``, ``r2`` are fresh uniform [0, 1) vectors per sparrow and iteration.
Lower fitness is better everywhere.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .model import HyperParams, build_model, train
from .numeric import RngStream
from .preprocess import WindowedDataset

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]


@dataclass
class SsaConfig:
    bounds: Sequence[tuple[float, float]]
    population_size: int = 20
    max_iterations: int = 100
    alpha_start: float = 0.9
    alpha_end: float = 0.4
    beta: float = 1.5
    gamma: float = 1.5
    seed: int = 0

    def __post_init__(self):
        self.bounds = [(float(lo), float(hi)) for lo, hi in self.bounds]
        if self.population_size < 2:
            raise ConfigError(f"population_size must be >= 2, got {self.population_size}")
        if self.max_iterations < 0:
            raise ConfigError(f"max_iterations must be >= 0, got {self.max_iterations}")
        if not self.bounds:
            raise ConfigError("at least one search dimension is required")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ConfigError(f"bounds must satisfy lo < hi, got ({lo}, {hi})")
        for name in ("alpha_start", "alpha_end", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    def alpha(self, t: int) -> float:
        """Inertia for iteration ``t``: linear from ``alpha_start`` to ``alpha_end``."""
        if self.max_iterations <= 1:
            return self.alpha_start
        frac = t / (self.max_iterations - 1)
        return self.alpha_start + (self.alpha_end - self.alpha_start) * frac


@dataclass
class SparrowState:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float


@dataclass
class SwarmState:
    sparrows: list[SparrowState]
    global_best: np.ndarray
    global_best_fitness: float
    iteration: int = 0


@dataclass
class SsaResult:
    best_position: np.ndarray
    best_fitness: float
    trace: list[float]  # global best fitness after init and after each iteration
    evaluations: list[tuple[int, int, np.ndarray, float]] = field(default_factory=list)


def evaluate_fitness(objective: Objective, x: np.ndarray) -> float:
    """Objective value, with NaN and infinities mapped to ``+inf``."""
    value = float(objective(x))
    return value if math.isfinite(value) else math.inf


def _argmin_first(values: Sequence[float]) -> int:
    return int(np.argmin(np.asarray(values, dtype=float)))


def init_population(
    objective: Objective,
    config: SsaConfig,
    rng: RngStream,
    initial: Optional[Sequence[Sequence[float]]] = None,
) -> SwarmState:
    """Uniform positions within bounds, zero velocities, evaluated personal bests.

    ``initial`` optionally fixes the first few positions (clipped to bounds).
    """
    pos = rng.child("init").uniform(0.0, 1.0, (config.population_size, config.dim))
    pos = config.lower + pos * (config.upper - config.lower)
    for i, x in enumerate(initial or []):
        if i < config.population_size:
            pos[i] = np.clip(np.asarray(x, dtype=float), config.lower, config.upper)
    sparrows = []
    for x in pos:
        f = evaluate_fitness(objective, x)
        sparrows.append(SparrowState(x.copy(), np.zeros(config.dim), x.copy(), f))
    g = _argmin_first([s.best_fitness for s in sparrows])
    return SwarmState(sparrows, sparrows[g].best_position.copy(), sparrows[g].best_fitness, 0)


def velocity_update(
    s: SparrowState,
    global_best: np.ndarray,
    alpha: float,
    beta: float,
    gamma: float,
    rng: Optional[RngStream] = None,
    r1: Optional[np.ndarray] = None,
    r2: Optional[np.ndarray] = None,
) -> np.ndarray:
    dim = s.position.shape[0]
    if r1 is None:
        r1 = rng.uniform(0.0, 1.0, dim)
    if r2 is None:
        r2 = rng.uniform(0.0, 1.0, dim)
    return (
        alpha * s.velocity
        + beta * r1 * (global_best - s.position)
        + gamma * r2 * (s.best_position - s.position)
    )


def position_update(s: SparrowState, v_new: np.ndarray, bounds) -> tuple[np.ndarray, np.ndarray]:
    """``x + v`` clamped to bounds; returns ``(x_new, v_new)`` with clamped components' velocity zeroed."""
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    raw = s.position + v_new
    x_new = np.clip(raw, lo, hi)
    v_out = np.where(x_new != raw, 0.0, v_new)
    return x_new, v_out


def update_bests(swarm: SwarmState, positions: Sequence[np.ndarray], velocities: Sequence[np.ndarray],
                 fitnesses: Sequence[float]) -> SwarmState:
    sparrows = []
    for s, x, v, f in zip(swarm.sparrows, positions, velocities, fitnesses):
        if f < s.best_fitness:
            sparrows.append(SparrowState(x.copy(), v.copy(), x.copy(), f))
        else:
            sparrows.append(SparrowState(x.copy(), v.copy(), s.best_position, s.best_fitness))
    g = _argmin_first([s.best_fitness for s in sparrows])
    best, best_f = swarm.global_best, swarm.global_best_fitness
    if sparrows[g].best_fitness < best_f:
        best, best_f = sparrows[g].best_position.copy(), sparrows[g].best_fitness
    return SwarmState(sparrows, best, best_f, swarm.iteration + 1)


def step(swarm: SwarmState, objective: Objective, config: SsaConfig, rng: RngStream,
         record: Optional[list] = None) -> SwarmState:
    t = swarm.iteration
    alpha = config.alpha(t)
    positions, velocities, fitnesses = [], [], []
    for i, s in enumerate(swarm.sparrows):
        r = rng.child(f"iter{t}/sparrow{i}")
        v = velocity_update(s, swarm.global_best, alpha, config.beta, config.gamma, r)
        x, v = position_update(s, v, config.bounds)
        f = evaluate_fitness(objective, x)
        positions.append(x)
        velocities.append(v)
        fitnesses.append(f)
        if record is not None:
            record.append((t + 1, i, x.copy(), f))
    return update_bests(swarm, positions, velocities, fitnesses)


def optimize(objective: Objective, config: SsaConfig,
             initial: Optional[Sequence[Sequence[float]]] = None) -> SsaResult:
    """Runs ``config.max_iterations`` swarm iterations and returns the global best."""
    rng = RngStream(config.seed)
    swarm = init_population(objective, config, rng, initial)
    evaluations = [(0, i, s.position.copy(), s.best_fitness) for i, s in enumerate(swarm.sparrows)]
    trace = [swarm.global_best_fitness]
    for _ in range(config.max_iterations):
        swarm = step(swarm, objective, config, rng, evaluations)
        trace.append(swarm.global_best_fitness)
        log.debug("ssa iteration %d best %.6g", swarm.iteration, swarm.global_best_fitness)
    return SsaResult(swarm.global_best.copy(), swarm.global_best_fitness, trace, evaluations)


def sphere(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * x))


# -- hyperparameter tuning --------------------------------------------------

@dataclass(frozen=True)
class SearchDim:
    name: str
    lo: float
    hi: float
    kind: str  # "log10" or "int"


DEFAULT_SEARCH_SPACE = (
    SearchDim("learning_rate", -4.0, -2.0, "log10"),
    SearchDim("gru_hidden", 16, 128, "int"),
    SearchDim("kernel_len", 2, 5, "int"),
    SearchDim("conv_base", 8, 32, "int"),
)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def decode(x: Sequence[float], base: HyperParams, space=DEFAULT_SEARCH_SPACE) -> HyperParams:
    """Maps a swarm position onto hyperparameters (integers rounded, then clamped)."""
    changes = {}
    for value, d in zip(x, space):
        value = min(max(float(value), d.lo), d.hi)
        if d.kind == "log10":
            changes[d.name] = 10.0 ** value
        else:
            changes[d.name] = min(max(_round_half_up(value), int(d.lo)), int(d.hi))
    if "conv_base" in changes:
        c1 = changes.pop("conv_base")
        changes["conv_channels"] = (c1, 2 * c1, 4 * c1)
    return replace(base, **changes)


def encode(hp: HyperParams, space=DEFAULT_SEARCH_SPACE) -> np.ndarray:
    out = []
    for d in space:
        if d.name == "conv_base":
            v = hp.conv_channels[0]
        else:
            v = getattr(hp, d.name)
        out.append(math.log10(v) if d.kind == "log10" else float(v))
    return np.array(out)


@dataclass
class TuneResult:
    best_hp: HyperParams
    best_fitness: float
    result: SsaResult
    evaluations: list[dict]
    default_fitness: float


def tune_hyperparams(
    train_ds: WindowedDataset,
    val_ds: WindowedDataset,
    base_hp: HyperParams,
    config: Optional[SsaConfig] = None,
    epoch_budget: int = 15,
    space=DEFAULT_SEARCH_SPACE,
    include_base: bool = True,
) -> TuneResult:
    """Searches the hyperparameter space with the swarm; fitness is validation MSE.

    Every fitness call trains a fresh model for ``epoch_budget`` epochs with a
    seed derived from the call's (iteration, sparrow) label. A failing
    evaluation scores ``+inf``. With ``include_base`` the first sparrow starts
    at ``base_hp`` so the untuned configuration is among the evaluated points.
    """
    if config is None:
        config = SsaConfig(bounds=[(d.lo, d.hi) for d in space], population_size=20,
                           max_iterations=10, seed=base_hp.seed)
    seeds = RngStream(config.seed).child("fitness")
    calls = {"n": 0}
    evaluations: list[dict] = []

    def objective(x: np.ndarray) -> float:
        n = calls["n"]
        calls["n"] += 1
        try:
            hp = decode(x, base_hp, space)
            hp = replace(hp, max_epochs=epoch_budget, seed=seeds.derive_seed(f"call{n}"))
            model = build_model(hp, train_ds.feature_dim)
            _, report = train(model, train_ds, val_ds, hp)
            fitness = report.best_val_loss
        except Exception as exc:  # any failed evaluation just loses the selection
            log.warning("fitness evaluation %d failed: %s", n, exc)
            hp, fitness = None, math.inf
        evaluations.append({
            "call": n,
            "position": [float(v) for v in x],
            "hyperparams": None if hp is None else _search_view(hp),
            "fitness": fitness,
        })
        return fitness

    initial = [encode(base_hp, space)] if include_base else None
    result = optimize(objective, config, initial)
    best_hp = decode(result.best_position, base_hp, space)
    default_fitness = evaluations[0]["fitness"] if include_base else math.nan
    return TuneResult(best_hp, result.best_fitness, result, evaluations, default_fitness)


def _search_view(hp: HyperParams) -> dict:
    return {
        "learning_rate": hp.learning_rate,
        "gru_hidden": hp.gru_hidden,
        "kernel_len": hp.kernel_len,
        "conv_channels": list(hp.conv_channels),
    }
