"""Car-following events: CSV ingestion, filtering, splitting and synthesis."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .cf_models import CarFollowingModel, ConstantModel, make_rule_model
from .errors import ConfigError, DataError, SimulationError
from .kinematics import DT, KinematicsConfig
from .simulation import rollout

logger = logging.getLogger(__name__)

COLUMNS = ("event_id", "t", "lv_speed", "fv_speed", "spacing")
DT_TOLERANCE = 1e-6
MIN_SAMPLES = 375


@dataclass(frozen=True, eq=False)
class TimeSeriesEvent:
    """One car-following episode sampled every ``dt`` seconds.

    ``spacing`` is the net gap from the leader's rear bumper to the follower's
    front bumper. ``t`` keeps the original timestamps so a load/write round trip
    is lossless; it defaults to ``t0 + i * dt``.
    """

    event_id: str
    lv_speed: np.ndarray
    fv_speed: np.ndarray
    spacing: np.ndarray
    dt: float = DT
    t: np.ndarray | None = None

    def __post_init__(self):
        arrays = {}
        for name in ("lv_speed", "fv_speed", "spacing"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        n = len(arrays["spacing"])
        if len(arrays["lv_speed"]) != n or len(arrays["fv_speed"]) != n:
            raise DataError(f"event {self.event_id}: series lengths differ")
        if n < 2:
            raise DataError(f"event {self.event_id}: needs at least two samples")
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise DataError(f"event {self.event_id}: non-finite {name}")
        if np.any(arrays["lv_speed"] < 0) or np.any(arrays["fv_speed"] < 0):
            raise DataError(f"event {self.event_id}: negative speed")
        if np.any(arrays["spacing"] <= 0):
            raise DataError(f"event {self.event_id}: non-positive spacing")
        t = np.arange(n) * self.dt if self.t is None else np.array(self.t, dtype=float)
        if len(t) != n:
            raise DataError(f"event {self.event_id}: time column length differs")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    def __len__(self) -> int:
        return len(self.spacing)

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    @property
    def rel_speed(self) -> np.ndarray:
        return self.lv_speed - self.fv_speed

    def states(self) -> np.ndarray:
        """(n, 3) array of (spacing, follower speed, relative speed)."""
        return np.stack([self.spacing, self.fv_speed, self.rel_speed], axis=1)


@dataclass
class Dataset:
    train: list[TimeSeriesEvent]
    validation: list[TimeSeriesEvent]
    test: list[TimeSeriesEvent]
    split_seed: int


# --- CSV ---------------------------------------------------------------------


def load_events(path, schema: dict[str, str] | None = None, *, dt: float = DT,
                diagnostics: list[str] | None = None) -> list[TimeSeriesEvent]:
    """Read events from a CSV with one row per sample.

    ``schema`` maps canonical column names to the file's headers. Events with a
    negative speed or non-positive spacing are dropped with a diagnostic
    (logged, and appended to ``diagnostics`` when given); structural problems
    (missing column, non-numeric cell, non-uniform sampling) raise
    :class:`DataError`.
    """
    schema = {c: c for c in COLUMNS} | (schema or {})
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    groups: dict[str, list[tuple[int, float, float, float, float]]] = {}
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in COLUMNS if schema[c] not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(schema[c] for c in missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                values = [float(row[schema[c]]) for c in COLUMNS[1:]]
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            groups.setdefault(row[schema["event_id"]], []).append((lineno, *values))

    events = []
    for event_id, rows in groups.items():
        rows.sort(key=lambda r: r[1])
        data = np.array([r[1:] for r in rows])
        steps = np.diff(data[:, 0])
        bad = np.flatnonzero(np.abs(steps - dt) > DT_TOLERANCE)
        if bad.size:
            i = bad[0] + 1
            raise DataError(f"{path}:{rows[i][0]}: event {event_id} has non-uniform sampling "
                            f"(step {steps[bad[0]]:.6g} s, expected {dt} s)")
        problem = None
        if np.any(data[:, 1:3] < 0):
            problem = "negative speed"
        elif np.any(data[:, 3] <= 0):
            problem = "non-positive spacing"
        elif len(rows) < 2:
            problem = "fewer than two samples"
        if problem:
            message = f"{path}: rejected event {event_id}: {problem}"
            logger.warning(message)
            if diagnostics is not None:
                diagnostics.append(message)
            continue
        events.append(TimeSeriesEvent(event_id, data[:, 1], data[:, 2], data[:, 3], dt, data[:, 0]))
    return events


def write_events(events, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for ev in events:
            for row in zip(ev.t, ev.lv_speed, ev.fv_speed, ev.spacing):
                writer.writerow([ev.event_id, *(repr(float(x)) for x in row)])
    return path


# --- filtering, splitting, derived fields ------------------------------------


def longest_run(mask: np.ndarray) -> int:
    best = run = 0
    for flag in mask:
        run = run + 1 if flag else 0
        best = max(best, run)
    return best


def filter_events(events, min_duration: float = 15.0, low_speed_threshold: float = 1.0,
                  max_low_speed_run: float = 5.0) -> list[TimeSeriesEvent]:
    """Keep long-enough events without an extended crawl or stop.

    Events failing either rule are dropped whole, not trimmed.
    """
    kept = []
    for ev in events:
        if ev.duration + 1e-9 < min_duration:
            continue
        if longest_run(ev.fv_speed < low_speed_threshold) * ev.dt > max_low_speed_run + 1e-9:
            continue
        kept.append(ev)
    return kept


def split_counts(n: int, ratios) -> list[int]:
    """Floor each share, then hand the remainder out train-first."""
    counts = [math.floor(r * n + 1e-9) for r in ratios]
    i = 0
    while sum(counts) < n:
        counts[i % len(counts)] += 1
        i += 1
    return counts


def split(events, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> Dataset:
    events = list(events)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be three non-negative shares summing to 1, got {ratios}")
    if len(events) < 3:
        raise DataError(f"need at least 3 events to split, got {len(events)}")
    ids = [ev.event_id for ev in events]
    if len(set(ids)) != len(ids):
        raise DataError("event ids must be unique")
    order = np.random.default_rng(seed).permutation(len(events))
    n_train, n_val, _ = split_counts(len(events), ratios)
    shuffled = [events[i] for i in order]
    return Dataset(shuffled[:n_train], shuffled[n_train:n_train + n_val],
                   shuffled[n_train + n_val:], seed)


def derive_fields(event: TimeSeriesEvent) -> dict[str, np.ndarray]:
    """Relative speed and central-difference follower acceleration (diagnostic only)."""
    return {
        "relative_speed": event.lv_speed - event.fv_speed,
        "fv_accel": np.gradient(event.fv_speed, event.dt),
    }


def applied_accel(event: TimeSeriesEvent) -> np.ndarray:
    """Forward-difference acceleration, the command that reproduces the next speed sample."""
    return np.diff(event.fv_speed) / event.dt


# --- synthesis ---------------------------------------------------------------

PROFILES = ("constant", "piecewise_accel", "sinusoidal", "brake_pulse", "mixed")


@dataclass
class SynthConfig:
    n_events: int = 100
    duration: float = 20.0
    leader_profile: str = "mixed"
    ground_truth_model: str = "idm"
    ground_truth_params: dict | None = field(default_factory=lambda: dict(
        a_max=1.2, v_desired=33.0, beta=4.0, a_comf=1.5, s_jam=2.0, t_headway=1.2))
    noise_std: float = 0.0
    seed: int = 0
    leader_speed_range: tuple[float, float] = (15.0, 30.0)
    leader_accel: float = 1.0
    sine_amplitude: float = 4.0
    pulse_floor: float = 8.0
    pulse_decel: float = 2.5
    gap_perturbation: float = 0.25
    event_prefix: str = "syn"

    def __post_init__(self):
        if self.duration < 15.0:
            raise ConfigError(f"duration must be at least 15 s, got {self.duration}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.leader_profile not in PROFILES:
            raise ConfigError(f"unknown leader profile {self.leader_profile!r}")
        if self.n_events < 1:
            raise ConfigError("n_events must be positive")

    def model(self) -> CarFollowingModel:
        if self.ground_truth_model == "constant":
            return ConstantModel((self.ground_truth_params or {}).get("value", 0.0))
        params = self.ground_truth_params
        if isinstance(params, dict):
            from .cf_models import PARAMS_BY_KIND
            params = PARAMS_BY_KIND[self.ground_truth_model](**params)
        return make_rule_model(self.ground_truth_model, params, name="ground_truth")


def leader_profile(kind: str, n: int, rng: np.random.Generator, cfg: SynthConfig, dt: float = DT) -> np.ndarray:
    lo, hi = cfg.leader_speed_range
    v0 = rng.uniform(lo, hi)
    t = np.arange(n) * dt
    if kind == "constant":
        return np.full(n, v0)
    if kind == "sinusoidal":
        amp = rng.uniform(0.25, 1.0) * cfg.sine_amplitude
        period = rng.uniform(8.0, 20.0)
        phase = rng.uniform(0, 2 * np.pi)
        return np.maximum(v0 + amp * np.sin(2 * np.pi * t / period + phase), 0.0)
    if kind == "piecewise_accel":
        acc = np.empty(n)
        i = 0
        while i < n:
            length = int(rng.uniform(2.0, 5.0) / dt)
            acc[i:i + length] = rng.uniform(-cfg.leader_accel, cfg.leader_accel)
            i += length
        v = np.empty(n)
        v[0] = v0
        for k in range(1, n):
            v[k] = min(max(v[k - 1] + acc[k - 1] * dt, lo), hi)
        return v
    if kind == "brake_pulse":
        floor = min(cfg.pulse_floor, v0)
        start = int(rng.uniform(2.0, 5.0) / dt)
        v = np.full(n, v0)
        k = start
        while k < n and v[k - 1] > floor:
            v[k] = max(v[k - 1] - cfg.pulse_decel * dt, floor)
            k += 1
        hold = k + int(2.0 / dt)
        v[k:hold] = floor
        for j in range(hold, n):
            v[j] = min(v[j - 1] + 0.5 * cfg.pulse_decel * dt, v0)
        return v
    raise ConfigError(f"unknown leader profile {kind!r}")


def equilibrium_gap(model: CarFollowingModel, speed: float, upper: float = 1000.0) -> float:
    """Gap at which ``model`` commands zero acceleration at steady ``speed``."""
    def acc(s):
        return float(model.propose(np.array([[s, speed, 0.0]])))

    lo = 1e-3
    if acc(lo) > 0 or acc(upper) < 0:
        return 2.0 + 1.5 * speed
    return brentq(acc, lo, upper, xtol=1e-12, rtol=1e-14)


def synthesize_events(config: SynthConfig, kin: KinematicsConfig = KinematicsConfig(),
                      max_retries: int = 10) -> list[TimeSeriesEvent]:
    """Leader profiles followed by the ground-truth model under jerk-limited kinematics."""
    rng = np.random.default_rng(config.seed)
    model = config.model()
    n = int(round(config.duration / kin.dt))
    events = []
    for i in range(config.n_events):
        kind = config.leader_profile
        if kind == "mixed":
            kind = ("piecewise_accel", "sinusoidal", "brake_pulse")[rng.integers(3)]
        lv = leader_profile(kind, n, rng, config, kin.dt)
        gap = equilibrium_gap(model, lv[0])
        gap *= 1.0 + rng.uniform(-1.0, 1.0) * config.gap_perturbation
        noise = rng.normal(0.0, config.noise_std, size=(1, n)) if config.noise_std > 0 else None
        for _attempt in range(max_retries + 1):
            sim = rollout(model.propose, lv[None, :], gap, lv[0], cfg=kin,
                          history=model.history, acc_noise=noise)
            if not sim.collided[0]:
                break
            gap *= 1.5
        else:
            raise SimulationError(f"ground-truth rollout collides for event {i} after {max_retries} retries")
        events.append(TimeSeriesEvent(f"{config.event_prefix}{config.seed}_{i:05d}", lv,
                                      sim.speed[0], sim.spacing[0], kin.dt))
    return events
