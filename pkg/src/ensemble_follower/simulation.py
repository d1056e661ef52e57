"""Batched closed-loop rollouts of a controller behind replayed leaders.

Every lane is an independent simulation. Lanes stop when their leader series
is exhausted or when the spacing reaches zero; stopped lanes keep their last
safe window so the controller is never evaluated on a collided state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kinematics import KinematicsConfig, integrate, limit_jerk

HISTORY = 25

Propose = Callable[[np.ndarray], np.ndarray]


@dataclass
class Rollout:
    """Simulated series; entries after a lane stops are NaN.

    ``accel[:, t]`` is the acceleration applied between samples t and t+1 and
    ``stepped[:, t]`` marks whether that transition happened.
    """

    spacing: np.ndarray
    speed: np.ndarray
    rel_speed: np.ndarray
    accel: np.ndarray
    stepped: np.ndarray
    collided: np.ndarray

    @property
    def n_steps(self) -> np.ndarray:
        return self.stepped.sum(axis=1)

    def valid_mask(self) -> np.ndarray:
        """Samples 1..N that were reached without collision."""
        mask = np.zeros_like(self.stepped)
        mask[:, 1:] = self.stepped[:, :-1]
        last = self.n_steps
        for i in np.flatnonzero(self.collided):
            mask[i, last[i]] = False
        return mask


def initial_windows(states: np.ndarray, history: int) -> np.ndarray:
    """Back-fill a (N, history, 3) window with each lane's first state."""
    return np.repeat(states[:, None, :], history, axis=1)


def push_window(windows: np.ndarray, states: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    shifted = np.concatenate([windows[:, 1:], states[:, None, :]], axis=1)
    if mask is None:
        return shifted
    return np.where(mask[:, None, None], shifted, windows)


def rollout(propose: Propose, lv_speed: np.ndarray, spacing0, fv_speed0, *,
            lengths=None, cfg: KinematicsConfig = KinematicsConfig(),
            history: int = 1, acc_noise: np.ndarray | None = None) -> Rollout:
    """Drive ``propose`` through the jerk-constrained kinematics.

    ``lv_speed`` is (N, T); ``lengths`` (default T) truncates individual lanes.
    ``acc_noise``, if given, is added to each command before clamping.
    """
    lv_speed = np.atleast_2d(np.asarray(lv_speed, dtype=float))
    n, horizon = lv_speed.shape
    lengths = np.full(n, horizon) if lengths is None else np.asarray(lengths)
    s = np.broadcast_to(np.asarray(spacing0, dtype=float), (n,)).copy()
    v = np.broadcast_to(np.asarray(fv_speed0, dtype=float), (n,)).copy()
    dv = lv_speed[:, 0] - v
    prev_acc = np.zeros(n)
    initialized = np.zeros(n, dtype=bool)
    collided = np.zeros(n, dtype=bool)

    out_s = np.full((n, horizon), np.nan)
    out_v = np.full((n, horizon), np.nan)
    out_dv = np.full((n, horizon), np.nan)
    out_acc = np.full((n, horizon), np.nan)
    stepped = np.zeros((n, horizon), dtype=bool)
    out_s[:, 0], out_v[:, 0], out_dv[:, 0] = s, v, dv

    windows = initial_windows(np.stack([s, v, dv], axis=1), history)
    for t in range(horizon - 1):
        active = (t < lengths - 1) & ~collided
        if not active.any():
            break
        cmd = np.asarray(propose(windows), dtype=float).reshape(n)
        if acc_noise is not None:
            cmd = cmd + acc_noise[:, t]
        cmd = np.clip(cmd, cfg.acc_min, cfg.acc_max)
        acc = limit_jerk(cmd, prev_acc, initialized, cfg)
        s_new, v_new, dv_new = integrate(s, v, dv, acc, lv_speed[:, t + 1], cfg.dt)

        s = np.where(active, s_new, s)
        v = np.where(active, v_new, v)
        dv = np.where(active, dv_new, dv)
        prev_acc = np.where(active, acc, prev_acc)
        initialized |= active
        crashed = active & (s_new <= 0.0)
        collided |= crashed

        out_s[active, t + 1] = s[active]
        out_v[active, t + 1] = v[active]
        out_dv[active, t + 1] = dv[active]
        out_acc[active, t] = acc[active]
        stepped[:, t] = active
        windows = push_window(windows, np.stack([s, v, dv], axis=1), active & ~crashed)

    return Rollout(out_s, out_v, out_dv, out_acc, stepped, collided)
