"""Exception hierarchy. Each class carries the CLI exit code for its category."""

from __future__ import annotations


class EnsembleFollowerError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(EnsembleFollowerError, ValueError):
    exit_code = 2
    category = "config"


class DataError(EnsembleFollowerError, ValueError):
    exit_code = 3
    category = "data"


class SimulationError(EnsembleFollowerError, ValueError):
    """Invalid kinematic input or stepping a finished episode."""

    exit_code = 4
    category = "simulation"


class TrainingError(EnsembleFollowerError, FloatingPointError):
    """Non-finite loss, gradient or activation surfaced during training."""

    exit_code = 5
    category = "training"


class ArtifactError(EnsembleFollowerError, OSError):
    """Missing, unreadable or malformed model/policy file."""

    exit_code = 6
    category = "artifact"
