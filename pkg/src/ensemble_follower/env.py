"""Car-following environments: replayed leader, jerk-limited follower, log-error reward.

:class:`CarFollowingEnv` runs one episode with scalar state and is the
reference. :class:`VecCarFollowingEnv` steps many lanes in lockstep for
training, resetting finished lanes onto fresh events.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TimeSeriesEvent
from .errors import ConfigError, SimulationError
from .kinematics import (ClipContext, FollowState, KinematicsConfig, integrate, limit_jerk,
                         step_jerk_constrained)
from .simulation import HISTORY, initial_windows, push_window

DONE_NONE, DONE_EXHAUSTED, DONE_COLLISION = "none", "exhausted", "collision"


@dataclass(frozen=True)
class RewardConfig:
    mode: str = "speed"
    rel_err_floor: float = 1e-4
    rel_err_ceiling: float = 10.0
    collision_penalty: float = 10.0

    def __post_init__(self):
        if self.mode not in ("speed", "spacing"):
            raise ConfigError(f"reward mode must be 'speed' or 'spacing', got {self.mode!r}")
        if not 0 < self.rel_err_floor < self.rel_err_ceiling:
            raise ConfigError("need 0 < rel_err_floor < rel_err_ceiling")

    @property
    def max_reward(self) -> float:
        return -np.log(self.rel_err_floor)

    @property
    def min_reward(self) -> float:
        return -np.log(self.rel_err_ceiling)


def log_error_reward(simulated, observed, cfg: RewardConfig):
    """Negative natural log of the clamped relative error."""
    simulated = np.asarray(simulated, dtype=float)
    observed = np.asarray(observed, dtype=float)
    diff = np.abs(simulated - observed)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(observed != 0, diff / np.abs(observed), np.where(diff == 0, 0.0, np.inf))
    return -np.log(np.clip(rel, cfg.rel_err_floor, cfg.rel_err_ceiling))


@dataclass
class StepResult:
    window: np.ndarray
    reward: float
    done: bool
    done_reason: str


@dataclass
class Episode:
    event: TimeSeriesEvent
    cursor: int
    state: FollowState
    clip_ctx: ClipContext
    window: np.ndarray
    done_reason: str = DONE_NONE

    @property
    def done(self) -> bool:
        return self.done_reason != DONE_NONE


class CarFollowingEnv:
    def __init__(self, reward: RewardConfig = RewardConfig(),
                 kinematics: KinematicsConfig = KinematicsConfig(), history: int = HISTORY):
        self.reward_cfg = reward
        self.kin = kinematics
        self.history = history
        self.episode: Episode | None = None

    def reset(self, event: TimeSeriesEvent) -> np.ndarray:
        state = FollowState(float(event.spacing[0]), float(event.fv_speed[0]),
                            float(event.lv_speed[0] - event.fv_speed[0]))
        window = np.repeat(np.array([state.as_tuple()]), self.history, axis=0)
        self.episode = Episode(event, 0, state, ClipContext(), window)
        return window.copy()

    def step(self, acc_cmd: float) -> StepResult:
        ep = self.episode
        if ep is None:
            raise SimulationError("call reset() before step()")
        if ep.done:
            raise SimulationError(f"episode already finished ({ep.done_reason})")
        ev = ep.event
        state, ctx = step_jerk_constrained(ep.state, ep.clip_ctx, float(acc_cmd),
                                           float(ev.lv_speed[ep.cursor + 1]), self.kin)
        cursor = ep.cursor + 1
        if state.collided:
            reward, reason = -self.reward_cfg.collision_penalty, DONE_COLLISION
        else:
            if self.reward_cfg.mode == "speed":
                reward = float(log_error_reward(state.fv_speed, ev.fv_speed[cursor], self.reward_cfg))
            else:
                reward = float(log_error_reward(state.spacing, ev.spacing[cursor], self.reward_cfg))
            reason = DONE_EXHAUSTED if cursor >= len(ev) - 1 else DONE_NONE
        window = np.concatenate([ep.window[1:], [state.as_tuple()]])
        self.episode = Episode(ev, cursor, state, ctx, window, reason)
        return StepResult(window.copy(), reward, reason != DONE_NONE, reason)


@dataclass
class EpisodeRecord:
    event_index: int
    episode_return: float
    length: int
    done_reason: str


class VecCarFollowingEnv:
    """``n_lanes`` episodes advanced together; events are drawn in shuffled passes."""

    def __init__(self, events, n_lanes: int, rng: np.random.Generator,
                 reward: RewardConfig = RewardConfig(),
                 kinematics: KinematicsConfig = KinematicsConfig(), history: int = HISTORY):
        events = list(events)
        if not events:
            raise ConfigError("environment needs at least one event")
        self.events = events
        self.n_lanes = n_lanes
        self.rng = rng
        self.reward_cfg = reward
        self.kin = kinematics
        self.history = history
        self.lengths = np.array([len(ev) for ev in events])
        horizon = int(self.lengths.max())
        self.lv = np.zeros((len(events), horizon))
        self.obs_speed = np.zeros_like(self.lv)
        self.obs_spacing = np.ones_like(self.lv)
        for i, ev in enumerate(events):
            self.lv[i, :len(ev)] = ev.lv_speed
            self.obs_speed[i, :len(ev)] = ev.fv_speed
            self.obs_spacing[i, :len(ev)] = ev.spacing
        self._queue: list[int] = []
        self.event_idx = np.zeros(n_lanes, dtype=int)
        self.cursor = np.zeros(n_lanes, dtype=int)
        self.s = np.zeros(n_lanes)
        self.v = np.zeros(n_lanes)
        self.dv = np.zeros(n_lanes)
        self.prev_acc = np.zeros(n_lanes)
        self.initialized = np.zeros(n_lanes, dtype=bool)
        self.returns = np.zeros(n_lanes)
        self.windows = np.zeros((n_lanes, history, 3))
        self.episodes_started = 0
        self._reset_lanes(np.arange(n_lanes))

    def _next_event(self) -> int:
        if not self._queue:
            self._queue = list(self.rng.permutation(len(self.events))[::-1])
        return int(self._queue.pop())

    def _reset_lanes(self, lanes):
        for lane in lanes:
            e = self._next_event()
            self.event_idx[lane] = e
            self.cursor[lane] = 0
            self.s[lane] = self.obs_spacing[e, 0]
            self.v[lane] = self.obs_speed[e, 0]
            self.dv[lane] = self.lv[e, 0] - self.v[lane]
            self.prev_acc[lane] = 0.0
            self.initialized[lane] = False
            self.returns[lane] = 0.0
            self.windows[lane] = initial_windows(np.array([[self.s[lane], self.v[lane], self.dv[lane]]]),
                                                 self.history)[0]
            self.episodes_started += 1

    def step(self, acc_cmd):
        """Advance every lane.

        Returns ``(next_windows, rewards, dones, finished)`` where ``next_windows``
        are the post-step observations (terminal ones included) and ``finished``
        lists an :class:`EpisodeRecord` per lane that ended. Ended lanes are reset
        afterwards, so :attr:`windows` already holds the next observations.
        """
        cmd = np.clip(np.asarray(acc_cmd, dtype=float).reshape(self.n_lanes),
                      self.kin.acc_min, self.kin.acc_max)
        if not np.all(np.isfinite(cmd)):
            raise SimulationError("non-finite acceleration command")
        acc = limit_jerk(cmd, self.prev_acc, self.initialized, self.kin)
        e = self.event_idx
        self.cursor += 1
        self.s, self.v, self.dv = integrate(self.s, self.v, self.dv, acc, self.lv[e, self.cursor],
                                            self.kin.dt)
        self.prev_acc = acc
        self.initialized[:] = True
        if self.reward_cfg.mode == "speed":
            rewards = log_error_reward(self.v, self.obs_speed[e, self.cursor], self.reward_cfg)
        else:
            rewards = log_error_reward(self.s, self.obs_spacing[e, self.cursor], self.reward_cfg)
        collided = self.s <= 0.0
        rewards = np.where(collided, -self.reward_cfg.collision_penalty, rewards)
        exhausted = self.cursor >= self.lengths[e] - 1
        dones = collided | exhausted
        self.returns += rewards
        self.windows = push_window(self.windows, np.stack([self.s, self.v, self.dv], axis=1))
        next_windows = self.windows.copy()
        finished = []
        ended = np.flatnonzero(dones)
        for lane in ended:
            reason = DONE_COLLISION if collided[lane] else DONE_EXHAUSTED
            finished.append(EpisodeRecord(int(e[lane]), float(self.returns[lane]),
                                          int(self.cursor[lane]), reason))
        if ended.size:
            self._reset_lanes(ended)
        return next_windows, rewards, dones, finished
