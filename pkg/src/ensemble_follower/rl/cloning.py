"""Behavioural cloning of a recurrent low-level policy.

Each training sample is the 25-step state window ending at sample t, and its
target is the forward-difference acceleration that carries the observed
follower speed from t to t+1. That is the command which, fed to the
simulator, reproduces the next recorded speed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..cf_models import ACC_LIMIT, NetPolicyModel
from ..data import applied_accel
from ..errors import ConfigError, DataError
from ..neural import AdamState, RecurrentNet, adam_step
from ..simulation import HISTORY
from .common import TrainingLog, check_finite, fit_normalizer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CloningConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    width: int = 32
    max_samples: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.width < 1:
            raise ConfigError("epochs, batch_size and width must be positive")
        if self.max_samples is not None and self.max_samples < 1:
            raise ConfigError("max_samples must be positive when given")


@dataclass
class CloningResult:
    model: NetPolicyModel
    log: TrainingLog
    epoch_losses: list[float]


def cloning_samples(events, history: int = HISTORY):
    """Stack (windows, targets) over every event; targets are clipped to the actuator range."""
    windows, targets = [], []
    for ev in events:
        states = ev.states()
        padded = np.concatenate([np.repeat(states[:1], history - 1, axis=0), states])
        idx = np.arange(len(ev) - 1)[:, None] + np.arange(history)[None, :]
        windows.append(padded[idx])
        targets.append(applied_accel(ev))
    if not windows:
        raise DataError("cloning needs at least one event")
    return np.concatenate(windows), np.clip(np.concatenate(targets), -ACC_LIMIT, ACC_LIMIT)


def train_rnn_cloning(events, cfg: CloningConfig = CloningConfig()) -> CloningResult:
    """Fit LSTM -> 4·tanh to forward-difference accelerations by minibatch squared error."""
    rng = np.random.default_rng(cfg.seed)
    events = list(events)
    windows, targets = cloning_samples(events)
    if cfg.max_samples is not None and len(targets) > cfg.max_samples:
        keep = np.sort(rng.choice(len(targets), cfg.max_samples, replace=False))
        windows, targets = windows[keep], targets[keep]
    normalizer = fit_normalizer(events)
    x = normalizer(windows)
    net = RecurrentNet.init(3, cfg.width, 1, rng)
    adam = AdamState(cfg.lr)
    log = TrainingLog()
    epoch_losses = []
    n = len(targets)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            raw, cache = net.forward(x[idx])
            squashed = np.tanh(raw[:, 0])
            err = ACC_LIMIT * squashed - targets[idx]
            loss = float(np.mean(err ** 2))
            check_finite(loss, "cloning loss", epoch=epoch)
            grad_raw = (2.0 * err / len(idx)) * ACC_LIMIT * (1.0 - squashed ** 2)
            grads, _ = net.backward(cache, grad_raw[:, None])
            adam_step(net.params, grads, adam)
            total += loss * len(idx)
        epoch_losses.append(total / n)
        log.add(step=epoch * n, episode=epoch, loss=epoch_losses[-1], lr=cfg.lr)
        logger.info("cloning epoch %d: mse %.5f", epoch, epoch_losses[-1])
    return CloningResult(NetPolicyModel(net, normalizer, "rnn", "rnn"), log, epoch_losses)
