"""Discrete-time longitudinal kinematics for a follower trailing a replayed leader.

Two update rules share one trapezoidal spacing integrator:

* the conventional model applies the commanded acceleration directly;
* the jerk-constrained model first clamps the command to the acceleration
  range, then limits its change from the previously applied acceleration.

The array kernels (:func:`limit_jerk`, :func:`integrate`) broadcast over any
number of lanes and are what the simulators use. The scalar operations wrap
them for single-state use and validate their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SimulationError

DT = 0.04


@dataclass(frozen=True)
class KinematicsConfig:
    dt: float = DT
    acc_min: float = -4.0
    acc_max: float = 4.0
    jerk_min: float = -10.0
    jerk_max: float = 10.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.acc_min < self.acc_max:
            raise ConfigError("acc_min must be below acc_max")
        if not self.jerk_min < self.jerk_max:
            raise ConfigError("jerk_min must be below jerk_max")

    @property
    def max_acc_change(self) -> float:
        """Largest per-step change of the applied acceleration."""
        return max(-self.jerk_min, self.jerk_max) * self.dt


@dataclass(frozen=True)
class FollowState:
    spacing: float
    fv_speed: float
    rel_speed: float

    @property
    def collided(self) -> bool:
        return self.spacing <= 0.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.spacing, self.fv_speed, self.rel_speed)


@dataclass(frozen=True)
class ClipContext:
    prev_acc_clip: float = 0.0
    initialized: bool = False


def limit_jerk(acc_cmd, prev_acc, initialized, cfg: KinematicsConfig):
    """Applied acceleration after the jerk limit; ``acc_cmd`` is assumed in range.

    Where the raw jerk is already inside the bounds the command passes through
    unchanged, so an inactive limit is bit-exact with the conventional model.
    Uninitialised lanes take the command as is.
    """
    jerk = (acc_cmd - prev_acc) / cfg.dt
    clipped = np.clip(jerk, cfg.jerk_min, cfg.jerk_max)
    limited = np.where(jerk == clipped, acc_cmd, prev_acc + clipped * cfg.dt)
    return np.where(initialized, limited, acc_cmd)


def integrate(spacing, fv_speed, rel_speed, acc, vl_next, dt):
    """One step of the trapezoidal update; follower speed is floored at zero."""
    v_next = np.maximum(fv_speed + acc * dt, 0.0)
    dv_next = vl_next - v_next
    s_next = spacing + 0.5 * (rel_speed + dv_next) * dt
    return s_next, v_next, dv_next


def _check_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise SimulationError(f"{name} must be finite, got {value!r}")


def step_conventional(state: FollowState, acc: float, vl_next: float,
                      cfg: KinematicsConfig = KinematicsConfig()) -> FollowState:
    _check_finite(acc=acc, vl_next=vl_next, spacing=state.spacing,
                  fv_speed=state.fv_speed, rel_speed=state.rel_speed)
    if vl_next < 0:
        raise SimulationError(f"leader speed must be non-negative, got {vl_next}")
    s, v, dv = integrate(state.spacing, state.fv_speed, state.rel_speed, acc, vl_next, cfg.dt)
    return FollowState(float(s), float(v), float(dv))


def clip_jerk(acc_cmd: float, ctx: ClipContext,
              cfg: KinematicsConfig = KinematicsConfig()) -> tuple[float, ClipContext]:
    _check_finite(acc_cmd=acc_cmd, prev_acc_clip=ctx.prev_acc_clip)
    acc = float(limit_jerk(acc_cmd, ctx.prev_acc_clip, ctx.initialized, cfg))
    return acc, ClipContext(acc, True)


def step_jerk_constrained(state: FollowState, ctx: ClipContext, acc_cmd: float, vl_next: float,
                          cfg: KinematicsConfig = KinematicsConfig()) -> tuple[FollowState, ClipContext]:
    _check_finite(acc_cmd=acc_cmd)
    cmd = min(max(acc_cmd, cfg.acc_min), cfg.acc_max)
    acc, ctx = clip_jerk(cmd, ctx, cfg)
    return step_conventional(state, acc, vl_next, cfg), ctx
