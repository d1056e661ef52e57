"""Trainers for the learned components."""

from .cloning import CloningConfig, train_rnn_cloning
from .ddpg import DdpgConfig, train_ddpg_lowlevel
from .ddqn import DdqnConfig, double_q_targets, train_ef_ddqn
from .ppo import PpoConfig, compute_gae, train_ef_ppo
from .replay import ReplayBuffer, Transition

__all__ = [
    "CloningConfig", "DdpgConfig", "DdqnConfig", "PpoConfig", "ReplayBuffer", "Transition",
    "compute_gae", "double_q_targets", "train_ddpg_lowlevel", "train_ef_ddqn", "train_ef_ppo",
    "train_rnn_cloning",
]
