"""Double-Q training of the discrete model selector."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..env import RewardConfig, VecCarFollowingEnv
from ..ensemble import EnsemblePolicy
from ..errors import ConfigError
from ..kinematics import KinematicsConfig
from ..neural import AdamState, MlpNet, adam_step
from ..simulation import HISTORY
from .common import TrainingLog, check_finite, fit_normalizer, linear_schedule
from .replay import ReplayBuffer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DdqnConfig:
    lr: float = 3e-4
    gamma: float = 0.99
    batch_size: int = 4096
    training_start: int = 200_000
    buffer_size: int = 1_000_000
    hidden: tuple[int, ...] = (64, 32)
    train_freq: int = 4
    target_update: int = 250
    eps_initial: float = 1.0
    eps_final: float = 0.25
    eps_fraction: float = 0.5
    total_steps: int = 2_000_000
    n_envs: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eps_final <= 1.0 or not 0.0 <= self.eps_initial <= 1.0:
            raise ConfigError("exploration probabilities must lie in [0, 1]")
        if self.training_start > self.buffer_size:
            raise ConfigError("training_start must not exceed buffer_size")
        if self.train_freq < 1 or self.target_update < 1 or self.n_envs < 1:
            raise ConfigError("train_freq, target_update and n_envs must be positive")

    def epsilon(self):
        return linear_schedule(self.eps_initial, self.eps_final, self.eps_fraction * self.total_steps)


@dataclass
class DdqnResult:
    policy: EnsemblePolicy
    log: TrainingLog
    target_net: MlpNet


def double_q_targets(rewards, dones, q_next_online, q_next_target, gamma):
    """r + gamma * Q_target(s', argmax_a Q_online(s', a)); terminal rows give r."""
    best = np.argmax(q_next_online, axis=-1)
    bootstrap = np.take_along_axis(q_next_target, best[..., None], axis=-1)[..., 0]
    return rewards + gamma * (1.0 - np.asarray(dones, dtype=float)) * bootstrap


def epsilon_greedy(q_values, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Greedy row-wise choice, replaced by a uniform draw with probability ``eps``."""
    q_values = np.atleast_2d(q_values)
    n, k = q_values.shape
    random_choice = rng.integers(k, size=n)
    explore = rng.random(n) < eps
    return np.where(explore, random_choice, np.argmax(q_values, axis=1))


def q_update(online: MlpNet, target: MlpNet, adam: AdamState, batch, gamma: float):
    """One squared-error step on a replay minibatch; returns the loss."""
    states, actions, rewards, next_states, dones = batch
    y = double_q_targets(rewards, dones, online(next_states), target(next_states), gamma)
    q, cache = online.forward(states)
    rows = np.arange(len(actions))
    err = q[rows, actions] - y
    loss = float(np.mean(err ** 2))
    check_finite(loss, "DDQN loss", max_target=float(np.max(np.abs(y))))
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = 2.0 * err / len(actions)
    grads, _ = online.backward(cache, grad_out)
    adam_step(online.params, grads, adam)
    return loss


def train_ef_ddqn(events, low_models, cfg: DdqnConfig = DdqnConfig(),
                  reward: RewardConfig = RewardConfig(),
                  kinematics: KinematicsConfig = KinematicsConfig()) -> DdqnResult:
    """Epsilon-greedy model selection with replay, double-Q targets and hard target copies.

    Transitions collected before ``training_start`` use uniformly random choices.
    """
    rng = np.random.default_rng(cfg.seed)
    low_models = list(low_models)
    k = len(low_models)
    normalizer = fit_normalizer(events)
    online = MlpNet.init([HISTORY * 3, *cfg.hidden, k], rng)
    target = online.copy()
    policy = EnsemblePolicy("discrete", online, low_models, normalizer)
    adam = AdamState(cfg.lr)
    env = VecCarFollowingEnv(events, cfg.n_envs, np.random.default_rng(rng.integers(2**63)),
                             reward, kinematics)
    buffer = ReplayBuffer(cfg.buffer_size, HISTORY * 3)
    epsilon = cfg.epsilon()
    log = TrainingLog()

    steps = updates = episodes = 0
    next_sync = cfg.target_update
    loss = float("nan")
    lanes = np.arange(cfg.n_envs)
    while steps < cfg.total_steps:
        windows = env.windows
        obs = policy.features(windows)
        eps = epsilon(steps)
        if steps < cfg.training_start:
            actions = rng.integers(k, size=cfg.n_envs)
        else:
            actions = epsilon_greedy(online(obs), eps, rng)
        accs = policy.ingredient_accs(windows)
        next_windows, rewards, dones, finished = env.step(accs[actions, lanes])
        buffer.add_batch(obs, actions, rewards, policy.features(next_windows), dones)
        steps += cfg.n_envs

        if steps >= cfg.training_start:
            due = steps // cfg.train_freq - updates
            for _ in range(max(due, 0)):
                loss = q_update(online, target, adam, buffer.sample(cfg.batch_size, rng), cfg.gamma)
                updates += 1
        else:
            updates = steps // cfg.train_freq
        while steps >= next_sync:
            target = online.copy()
            next_sync += cfg.target_update
        for rec in finished:
            episodes += 1
            log.add(step=steps, episode=episodes, cumulative_reward=rec.episode_return,
                    loss=loss, epsilon=eps)
    logger.info("EF-DDQN finished: %d steps, %d episodes, %d updates", steps, episodes, updates)
    return DdqnResult(policy, log, target)
