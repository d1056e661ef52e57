from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    state: np.ndarray
    action: object
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest transitions are overwritten first."""

    def __init__(self, capacity: int, obs_dim: int, action_shape=(), action_dtype=np.int64):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_states = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros((capacity, *action_shape), dtype=action_dtype)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition):
        self.add_batch(np.asarray(t.state)[None], np.asarray(t.action)[None], np.array([t.reward]),
                       np.asarray(t.next_state)[None], np.array([t.done]))

    def add_batch(self, states, actions, rewards, next_states, dones):
        n = len(rewards)
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must be finite")
        idx = (self._next + np.arange(n)) % self.capacity
        self.states[idx] = states
        self.actions[idx] = actions
        self.rewards[idx] = rewards
        self.next_states[idx] = next_states
        self.dones[idx] = dones
        self._next = (self._next + n) % self.capacity
        self.size = min(self.size + n, self.capacity)
        self.inserted += n

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform minibatch, without replacement inside the batch."""
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return (self.states[idx].astype(float), self.actions[idx], self.rewards[idx],
                self.next_states[idx].astype(float), self.dones[idx])

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = self._next if self.size == self.capacity else 0
        order = (start + np.arange(self.size)) % self.capacity
        return [Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                           self.next_states[i], bool(self.dones[i])) for i in order]
