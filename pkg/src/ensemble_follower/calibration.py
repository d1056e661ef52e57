"""Genetic-algorithm calibration of rule-based models against observed spacing.

The objective is the spacing RMSPE pooled over every simulated step of every
event, plus a fixed penalty per event that ends in a collision. A whole
population is simulated at once: each (individual, event) pair is one lane of
a batched rollout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cf_models import KERNELS, PARAMS_BY_KIND, CarFollowingModel, RuleParams
from .data import TimeSeriesEvent
from .errors import ConfigError, DataError
from .kinematics import KinematicsConfig
from .simulation import Rollout, rollout

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaConfig:
    population: int = 100
    max_generations: int = 100
    stall_generations: int = 100
    mutation_prob: float = 0.2
    tournament_size: int = 3
    crossover_prob: float = 0.9
    mutation_scale: float = 0.1
    elitism: int = 1
    crash_penalty: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ConfigError("population must be at least 2")
        for name in ("mutation_prob", "crossover_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elitism < self.population:
            raise ConfigError("elitism must be smaller than the population")
        if self.tournament_size < 1:
            raise ConfigError("tournament_size must be positive")


@dataclass
class CalibrationResult:
    model_kind: str
    best_params: RuleParams
    best_fitness: float
    fitness_history: list[float] = field(default_factory=list)
    crashes_at_best: int = 0
    generations: int = 0

    @property
    def accepted(self) -> bool:
        return self.crashes_at_best == 0

    def to_text(self) -> str:
        lines = [
            f"model_kind = {self.model_kind}",
            f"best_fitness = {self.best_fitness!r}",
            f"crashes_at_best = {self.crashes_at_best}",
            f"generations = {self.generations}",
        ]
        for name in self.best_params.names():
            lines.append(f"param.{name} = {float(getattr(self.best_params, name))!r}")
        return "\n".join(lines) + "\n"


class EventBatch:
    """Events stacked into padded (E, T) arrays for batched simulation."""

    def __init__(self, events):
        events = list(events)
        if not events:
            raise DataError("calibration needs at least one event")
        self.events = events
        self.lengths = np.array([len(ev) for ev in events])
        horizon = int(self.lengths.max())
        self.lv_speed = np.empty((len(events), horizon))
        self.spacing = np.empty_like(self.lv_speed)
        self.fv_speed = np.empty_like(self.lv_speed)
        for i, ev in enumerate(events):
            n = len(ev)
            for dst, src in ((self.lv_speed, ev.lv_speed), (self.spacing, ev.spacing),
                             (self.fv_speed, ev.fv_speed)):
                dst[i, :n] = src
                dst[i, n:] = src[-1]

    def __len__(self):
        return len(self.events)

    def simulate(self, propose, cfg: KinematicsConfig = KinematicsConfig(), history: int = 1,
                 repeat: int = 1) -> Rollout:
        """Roll ``propose`` over every event, ``repeat`` times in a row (lane = rep*E + e)."""
        tile = (repeat, 1)
        return rollout(propose, np.tile(self.lv_speed, tile), np.tile(self.spacing[:, 0], repeat),
                       np.tile(self.fv_speed[:, 0], repeat), lengths=np.tile(self.lengths, repeat),
                       cfg=cfg, history=history)


def squared_errors(sim: Rollout, observed: np.ndarray, series: str = "spacing"):
    """Per-lane sums of squared error and squared observation over valid samples."""
    mask = sim.valid_mask()
    simulated = getattr(sim, series)
    err = np.where(mask, simulated - observed, 0.0)
    obs = np.where(mask, observed, 0.0)
    return (err ** 2).sum(axis=1), (obs ** 2).sum(axis=1)


def simulate_model_on_event(model: CarFollowingModel, event: TimeSeriesEvent,
                            cfg: KinematicsConfig = KinematicsConfig()) -> dict:
    """Closed-loop replay of one event: initial state from sample 0, recorded leader speed."""
    sim = rollout(model.propose, event.lv_speed[None, :], event.spacing[0], event.fv_speed[0],
                  cfg=cfg, history=model.history)
    n = int(sim.n_steps[0]) + 1
    return {"spacing_sim": sim.spacing[0, :n], "speed_sim": sim.speed[0, :n],
            "collided": bool(sim.collided[0])}


def population_fitness(kind: str, population: np.ndarray, batch: EventBatch,
                       crash_penalty: float = 1.0, cfg: KinematicsConfig = KinematicsConfig()):
    """Fitness and crash count of each row of ``population`` (P, n_params)."""
    population = np.atleast_2d(population)
    n_pop, n_ev = len(population), len(batch)
    params = PARAMS_BY_KIND[kind].from_vector(np.repeat(population, n_ev, axis=0))
    kernel = KERNELS[kind]

    def propose(windows):
        return kernel(params, windows[:, -1, 0], windows[:, -1, 1], windows[:, -1, 2])

    sim = batch.simulate(propose, cfg, repeat=n_pop)
    sse, sso = squared_errors(sim, np.tile(batch.spacing, (n_pop, 1)))
    sse = sse.reshape(n_pop, n_ev).sum(axis=1)
    sso = sso.reshape(n_pop, n_ev).sum(axis=1)
    crashes = sim.collided.reshape(n_pop, n_ev).sum(axis=1)
    rmspe = np.sqrt(sse / np.where(sso > 0, sso, np.nan))
    rmspe = np.where(sso > 0, rmspe, 0.0)
    return rmspe + crash_penalty * crashes, crashes


def fitness(params: RuleParams, events, crash_penalty: float = 1.0,
            cfg: KinematicsConfig = KinematicsConfig()) -> float:
    batch = events if isinstance(events, EventBatch) else EventBatch(events)
    value, _ = population_fitness(params.kind, params.to_vector()[None, :], batch, crash_penalty, cfg)
    return float(value[0])


def _tournament(rng, fit, n_pick, size):
    contenders = rng.integers(len(fit), size=(n_pick, size))
    winners = np.argmin(fit[contenders], axis=1)
    return contenders[np.arange(n_pick), winners]


def run_ga(model_kind: str, events, config: GaConfig = GaConfig(), bounds=None,
           cfg: KinematicsConfig = KinematicsConfig(), progress=None) -> CalibrationResult:
    """Real-coded GA: tournament selection, arithmetic crossover, Gaussian mutation, elitism.

    ``bounds`` is ``(lo, hi)`` arrays; it defaults to the parameter class bounds.
    ``progress(generation, best_fitness)`` is called after every generation.
    """
    cls = PARAMS_BY_KIND[model_kind]
    lo, hi = cls.bound_arrays() if bounds is None else (np.asarray(b, dtype=float) for b in bounds)
    if np.any(lo > hi):
        raise ConfigError("lower bounds must not exceed upper bounds")
    batch = events if isinstance(events, EventBatch) else EventBatch(events)
    rng = np.random.default_rng(config.seed)
    n_par, n_pop = len(lo), config.population
    width = hi - lo

    pop = lo + rng.random((n_pop, n_par)) * width
    fit, crashes = population_fitness(model_kind, pop, batch, config.crash_penalty, cfg)
    best = int(np.argmin(fit))
    best_x, best_fit, best_crashes = pop[best].copy(), float(fit[best]), int(crashes[best])
    history = [best_fit]
    stall = 0
    generation = 0
    for generation in range(1, config.max_generations + 1):
        order = np.argsort(fit, kind="stable")
        elite = pop[order[:config.elitism]]
        n_child = n_pop - config.elitism
        n_pairs = (n_child + 1) // 2
        p1 = pop[_tournament(rng, fit, n_pairs, config.tournament_size)]
        p2 = pop[_tournament(rng, fit, n_pairs, config.tournament_size)]
        alpha = rng.random((n_pairs, n_par))
        do_cross = rng.random((n_pairs, 1)) < config.crossover_prob
        c1 = np.where(do_cross, alpha * p1 + (1 - alpha) * p2, p1)
        c2 = np.where(do_cross, (1 - alpha) * p1 + alpha * p2, p2)
        children = np.concatenate([c1, c2])[:n_child]
        mutate = rng.random(children.shape) < config.mutation_prob
        noise = rng.normal(0.0, 1.0, children.shape) * config.mutation_scale * width
        children = np.clip(np.where(mutate, children + noise, children), lo, hi)

        pop = np.concatenate([elite, children])
        fit, crashes = population_fitness(model_kind, pop, batch, config.crash_penalty, cfg)
        best = int(np.argmin(fit))
        if fit[best] < best_fit:
            best_x, best_fit, best_crashes = pop[best].copy(), float(fit[best]), int(crashes[best])
            stall = 0
        else:
            stall += 1
        history.append(best_fit)
        if progress is not None:
            progress(generation, best_fit)
        if stall >= config.stall_generations:
            break

    if best_crashes:
        logger.warning("%s calibration: best candidate still crashes on %d event(s)",
                       model_kind, best_crashes)
    return CalibrationResult(model_kind, cls.from_vector(best_x), best_fit, history,
                             best_crashes, generation)
