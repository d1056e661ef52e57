"""Deterministic actor-critic training of a feed-forward low-level policy.

The actor maps the flattened, standardised 25-step window to a raw output
that :class:`NetPolicyModel` squashes to ``4·tanh``. The critic scores
``[window, acc / 4]``. Exploration adds Gaussian noise to the command, with
a standard deviation decaying linearly to zero over the run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..cf_models import ACC_LIMIT, NetPolicyModel
from ..env import RewardConfig, VecCarFollowingEnv
from ..errors import ConfigError
from ..kinematics import KinematicsConfig
from ..neural import AdamState, MlpNet, adam_step
from ..simulation import HISTORY
from .common import TrainingLog, check_finite, fit_normalizer, linear_schedule
from .replay import ReplayBuffer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DdpgConfig:
    gamma: float = 0.96
    lr: float = 1e-3
    batch_size: int = 256
    training_start: int = 100_000
    buffer_size: int = 1_000_000
    tau: float = 0.005
    hidden: tuple[int, ...] = (64, 32)
    noise_std: float = 0.4
    train_freq: int = 1
    total_steps: int = 1_000_000
    n_envs: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.training_start > self.buffer_size:
            raise ConfigError("training_start must not exceed buffer_size")
        if self.noise_std < 0 or self.train_freq < 1 or self.n_envs < 1:
            raise ConfigError("noise_std must be non-negative; train_freq and n_envs positive")


@dataclass
class DdpgResult:
    model: NetPolicyModel
    log: TrainingLog
    critic: MlpNet


def soft_update(target: MlpNet, source: MlpNet, tau: float):
    for name, p in target.params.items():
        p *= 1.0 - tau
        p += tau * source.params[name]


def ddpg_update(actor, critic, actor_t, critic_t, actor_adam, critic_adam, batch, cfg: DdpgConfig):
    """One critic regression step, one deterministic policy-gradient step; returns losses."""
    states, actions, rewards, next_states, dones = batch
    n = len(rewards)
    next_acc = ACC_LIMIT * np.tanh(actor_t(next_states))
    q_next = critic_t(np.concatenate([next_states, next_acc / ACC_LIMIT], axis=1))[:, 0]
    y = rewards + cfg.gamma * (1.0 - dones.astype(float)) * q_next
    q, cache = critic.forward(np.concatenate([states, actions / ACC_LIMIT], axis=1))
    err = q[:, 0] - y
    critic_loss = float(np.mean(err ** 2))
    check_finite(critic_loss, "DDPG critic loss")
    grads, _ = critic.backward(cache, (2.0 * err / n)[:, None])
    adam_step(critic.params, grads, critic_adam)

    raw, a_cache = actor.forward(states)
    squashed = np.tanh(raw)
    q_pi, c_cache = critic.forward(np.concatenate([states, squashed], axis=1))
    _, grad_in = critic.backward(c_cache, -np.ones_like(q_pi) / n)
    # critic sees acc / 4 = tanh(raw)
    grad_raw = grad_in[:, -1:] * (1.0 - squashed ** 2)
    a_grads, _ = actor.backward(a_cache, grad_raw)
    adam_step(actor.params, a_grads, actor_adam)
    soft_update(actor_t, actor, cfg.tau)
    soft_update(critic_t, critic, cfg.tau)
    return critic_loss, float(-q_pi.mean())


def train_ddpg_lowlevel(events, cfg: DdpgConfig = DdpgConfig(),
                        reward: RewardConfig = RewardConfig(),
                        kinematics: KinematicsConfig = KinematicsConfig()) -> DdpgResult:
    rng = np.random.default_rng(cfg.seed)
    events = list(events)
    normalizer = fit_normalizer(events)
    obs_dim = HISTORY * 3
    actor = MlpNet.init([obs_dim, *cfg.hidden, 1], rng)
    critic = MlpNet.init([obs_dim + 1, *cfg.hidden, 1], rng)
    actor_t, critic_t = actor.copy(), critic.copy()
    actor_adam, critic_adam = AdamState(cfg.lr), AdamState(cfg.lr)
    model = NetPolicyModel(actor, normalizer, "ddpg", "ddpg")
    env = VecCarFollowingEnv(events, cfg.n_envs, np.random.default_rng(rng.integers(2**63)),
                             reward, kinematics)
    buffer = ReplayBuffer(cfg.buffer_size, obs_dim, action_shape=(1,), action_dtype=np.float64)
    noise = linear_schedule(cfg.noise_std, 0.0, cfg.total_steps)
    log = TrainingLog()

    steps = updates = episodes = 0
    critic_loss = policy_loss = float("nan")
    while steps < cfg.total_steps:
        windows = env.windows
        obs = model.features(windows)
        acc = model.propose(windows) + noise(steps) * rng.standard_normal(cfg.n_envs)
        acc = np.clip(acc, -ACC_LIMIT, ACC_LIMIT)
        next_windows, rewards, dones, finished = env.step(acc)
        buffer.add_batch(obs, acc[:, None], rewards, model.features(next_windows), dones)
        steps += cfg.n_envs
        if steps >= cfg.training_start:
            for _ in range(max(steps // cfg.train_freq - updates, 0)):
                critic_loss, policy_loss = ddpg_update(actor, critic, actor_t, critic_t, actor_adam,
                                                       critic_adam, buffer.sample(cfg.batch_size, rng),
                                                       cfg)
                updates += 1
        else:
            updates = steps // cfg.train_freq
        for rec in finished:
            episodes += 1
            log.add(step=steps, episode=episodes, cumulative_reward=rec.episode_return,
                    loss=critic_loss, policy_loss=policy_loss, lr=cfg.lr)
    logger.info("DDPG finished: %d steps, %d episodes, %d updates", steps, episodes, updates)
    return DdpgResult(model, log, critic)
