"""Clipped-surrogate policy optimisation of the convex weight policy.

The actor emits the mean of a diagonal Gaussian over k pre-softmax logits
(with a state-independent log std). A sampled logit vector is squashed by
softmax into blend weights; its Gaussian log-density feeds the ratio.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..env import RewardConfig, VecCarFollowingEnv
from ..ensemble import EnsemblePolicy, blend, softmax
from ..errors import ConfigError
from ..kinematics import KinematicsConfig
from ..neural import AdamState, MlpNet, adam_step
from ..simulation import HISTORY
from .common import TrainingLog, check_finite, fit_normalizer

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PpoConfig:
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    lr_decay: bool = True
    gamma: float = 0.99
    gae_lambda: float = 0.95
    step_per_collect: int = 5000
    repeat: int = 4
    batch_size: int = 2500
    hidden: tuple[int, ...] = (64, 32)
    clip_eps: float = 0.2
    vf_coef: float = 0.25
    ent_coef: float = 0.01
    init_log_std: float = 0.0
    normalize_advantage: bool = True
    total_steps: int = 2_000_000
    n_envs: int = 16
    seed: int = 0

    def __post_init__(self):
        if not self.clip_eps > 0:
            raise ConfigError("clip_eps must be positive")
        if self.vf_coef < 0 or self.ent_coef < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if self.step_per_collect < self.n_envs:
            raise ConfigError("step_per_collect must cover at least one step per environment")


@dataclass
class SimplexAudit:
    """Worst-case simplex and convexity deviations seen in collected rollouts."""

    n_vectors: int = 0
    min_weight: float = np.inf
    max_sum_error: float = 0.0
    max_range_excursion: float = 0.0

    def record(self, weights, accs):
        """``weights`` is (..., k), ``accs`` (k, ...); the raw combination is checked unclipped."""
        blended = np.einsum("...k,k...->...", weights, accs)
        self.n_vectors += int(np.prod(weights.shape[:-1]))
        self.min_weight = min(self.min_weight, float(weights.min()))
        self.max_sum_error = max(self.max_sum_error, float(np.abs(weights.sum(-1) - 1).max()))
        excursion = np.maximum(accs.min(0) - blended, blended - accs.max(0))
        self.max_range_excursion = max(self.max_range_excursion, float(excursion.max()))


@dataclass
class PpoResult:
    policy: EnsemblePolicy
    log: TrainingLog
    critic: MlpNet
    log_std: np.ndarray
    audit: SimplexAudit = field(default_factory=SimplexAudit)


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float):
    """Generalised advantages over a (T, ...) rollout.

    ``values[t]`` estimates the state before step t, ``last_values`` the state
    after the final step. A done flag stops both bootstrapping and the recursion.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    notdone = 1.0 - np.asarray(dones, dtype=float)
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    next_value = np.asarray(last_values, dtype=float)
    for t in reversed(range(len(rewards))):
        delta = rewards[t] + gamma * notdone[t] * next_value - values[t]
        running = delta + gamma * lam * notdone[t] * running
        adv[t] = running
        next_value = values[t]
    return adv


def gaussian_log_prob(z, mean, log_std):
    var = np.exp(2.0 * log_std)
    return np.sum(-0.5 * (z - mean) ** 2 / var - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std + 0.5 * (1.0 + LOG_2PI)))


def clipped_surrogate(ratio, adv, clip_eps):
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def surrogate_grad_log_prob(ratio, adv, clip_eps):
    """d L_clip / d log_prob per sample; zero where the clipped branch is the minimum."""
    active = np.where(adv >= 0, ratio <= 1.0 + clip_eps, ratio >= 1.0 - clip_eps)
    return np.where(active, ratio * adv, 0.0)


def ppo_losses_and_grads(actor: MlpNet, log_std, critic: MlpNet, batch, cfg: PpoConfig):
    """Loss terms and gradients of ``-L_clip + c1 * L_vf - c2 * entropy`` (minimised)."""
    obs, z, old_logp, adv, returns = batch
    n = len(adv)
    mean, actor_cache = actor.forward(obs)
    logp = gaussian_log_prob(z, mean, log_std)
    ratio = np.exp(logp - old_logp)
    check_finite(ratio, "probability ratio")
    policy_obj = clipped_surrogate(ratio, adv, cfg.clip_eps)
    g_logp = -surrogate_grad_log_prob(ratio, adv, cfg.clip_eps)[:, None] / n
    var = np.exp(2.0 * log_std)
    d_mean = g_logp * (z - mean) / var
    d_log_std = np.sum(g_logp * ((z - mean) ** 2 / var - 1.0), axis=0) - cfg.ent_coef
    actor_grads, _ = actor.backward(actor_cache, d_mean)

    values, critic_cache = critic.forward(obs)
    err = values[:, 0] - returns
    critic_grads, _ = critic.backward(critic_cache, (2.0 * cfg.vf_coef * err / n)[:, None])
    terms = {
        "policy_loss": float(-policy_obj.mean()),
        "value_loss": float(np.mean(err ** 2)),
        "entropy": gaussian_entropy(log_std),
    }
    return terms, actor_grads, d_log_std, critic_grads


def train_ef_ppo(events, low_models, cfg: PpoConfig = PpoConfig(),
                 reward: RewardConfig = RewardConfig(),
                 kinematics: KinematicsConfig = KinematicsConfig()) -> PpoResult:
    rng = np.random.default_rng(cfg.seed)
    low_models = list(low_models)
    k = len(low_models)
    normalizer = fit_normalizer(events)
    obs_dim = HISTORY * 3
    actor = MlpNet.init([obs_dim, *cfg.hidden, k], rng)
    critic = MlpNet.init([obs_dim, *cfg.hidden, 1], rng)
    actor_params = dict(actor.params)
    actor_params["log_std"] = np.full(k, cfg.init_log_std)
    actor_adam, critic_adam = AdamState(cfg.actor_lr), AdamState(cfg.critic_lr)
    policy = EnsemblePolicy("convex", actor, low_models, normalizer)
    env = VecCarFollowingEnv(events, cfg.n_envs, np.random.default_rng(rng.integers(2**63)),
                             reward, kinematics)
    log = TrainingLog()
    audit = SimplexAudit()
    horizon = cfg.step_per_collect // cfg.n_envs

    steps = episodes = 0
    terms = {"policy_loss": float("nan"), "value_loss": float("nan"), "entropy": float("nan")}
    while steps < cfg.total_steps:
        frac = 1.0 - steps / cfg.total_steps if cfg.lr_decay else 1.0
        actor_lr, critic_lr = cfg.actor_lr * frac, cfg.critic_lr * frac
        obs_buf = np.zeros((horizon, cfg.n_envs, obs_dim))
        z_buf = np.zeros((horizon, cfg.n_envs, k))
        logp_buf = np.zeros((horizon, cfg.n_envs))
        val_buf = np.zeros((horizon, cfg.n_envs))
        rew_buf = np.zeros((horizon, cfg.n_envs))
        done_buf = np.zeros((horizon, cfg.n_envs), dtype=bool)
        log_std = actor_params["log_std"]
        for t in range(horizon):
            windows = env.windows
            obs = policy.features(windows)
            mean = actor(obs)
            z = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
            weights = softmax(z)
            accs = policy.ingredient_accs(windows)
            acc = blend(weights, accs)
            audit.record(weights, accs)
            _, rewards, dones, finished = env.step(acc)
            obs_buf[t], z_buf[t] = obs, z
            logp_buf[t] = gaussian_log_prob(z, mean, log_std)
            val_buf[t] = critic(obs)[:, 0]
            rew_buf[t], done_buf[t] = rewards, dones
            steps += cfg.n_envs
            for rec in finished:
                episodes += 1
                log.add(step=steps, episode=episodes, cumulative_reward=rec.episode_return,
                        policy_loss=terms["policy_loss"], value_loss=terms["value_loss"],
                        entropy=terms["entropy"], lr=actor_lr)
        last_values = critic(policy.features(env.windows))[:, 0]
        adv = compute_gae(rew_buf, val_buf, done_buf, last_values, cfg.gamma, cfg.gae_lambda)
        returns = (adv + val_buf).reshape(-1)
        adv = adv.reshape(-1)
        if cfg.normalize_advantage:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        flat = (obs_buf.reshape(-1, obs_dim), z_buf.reshape(-1, k), logp_buf.reshape(-1), adv, returns)
        n = len(adv)
        for _ in range(cfg.repeat):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = tuple(a[idx] for a in flat)
                terms, a_grads, d_log_std, c_grads = ppo_losses_and_grads(
                    actor, actor_params["log_std"], critic, batch, cfg)
                a_grads["log_std"] = d_log_std
                adam_step(actor_params, a_grads, actor_adam, lr=actor_lr)
                adam_step(critic.params, c_grads, critic_adam, lr=critic_lr)
    logger.info("EF-PPO finished: %d steps, %d episodes", steps, episodes)
    return PpoResult(policy, log, critic, actor_params["log_std"], audit)
