"""Pipeline configuration: one section per component, two presets, YAML overrides.

The YAML file mirrors the dataclasses field for field::

    ddqn:
      total_steps: 200000
      batch_size: 1024
    ga:
      population: 50

Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .calibration import GaConfig
from .data import SynthConfig
from .env import RewardConfig
from .errors import ConfigError
from .kinematics import KinematicsConfig
from .rl.cloning import CloningConfig
from .rl.ddpg import DdpgConfig
from .rl.ddqn import DdqnConfig
from .rl.ppo import PpoConfig

PRESETS = ("paper", "desk")


@dataclass(frozen=True)
class FilterConfig:
    min_duration: float = 15.0
    low_speed_threshold: float = 1.0
    max_low_speed_run: float = 5.0


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or abs(sum(self.ratios) - 1) > 1e-9:
            raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {self.ratios}")


@dataclass(frozen=True)
class EvalConfig:
    max_overlays: int = 4


@dataclass(frozen=True)
class PipelineConfig:
    preset: str = "paper"
    synth: SynthConfig = field(default_factory=SynthConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    kinematics: KinematicsConfig = field(default_factory=KinematicsConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    cloning: CloningConfig = field(default_factory=CloningConfig)
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    ddqn: DdqnConfig = field(default_factory=DdqnConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def with_seed(self, seed: int) -> PipelineConfig:
        """Apply one seed to every stochastic component."""
        return replace(self, synth=replace(self.synth, seed=seed),
                       split=replace(self.split, seed=seed), ga=replace(self.ga, seed=seed),
                       cloning=replace(self.cloning, seed=seed), ddpg=replace(self.ddpg, seed=seed),
                       ddqn=replace(self.ddqn, seed=seed), ppo=replace(self.ppo, seed=seed))

    def to_dict(self) -> dict:
        return {f.name: (dataclasses.asdict(getattr(self, f.name))
                         if dataclasses.is_dataclass(getattr(self, f.name)) else getattr(self, f.name))
                for f in fields(self)}


def paper_config() -> PipelineConfig:
    return PipelineConfig()


def desk_config() -> PipelineConfig:
    """Laptop-scale run: shorter trainings, smaller buffers, fewer synthetic events."""
    return PipelineConfig(
        preset="desk",
        synth=SynthConfig(n_events=60),
        ga=GaConfig(population=50, max_generations=50, stall_generations=20),
        cloning=CloningConfig(epochs=20, max_samples=20_000),
        ddpg=DdpgConfig(total_steps=100_000, training_start=10_000, buffer_size=100_000,
                        train_freq=4),
        ddqn=DdqnConfig(total_steps=200_000, training_start=10_000, buffer_size=100_000,
                        batch_size=1024, gamma=0.9, target_update=1000),
        ppo=PpoConfig(total_steps=200_000),
    )


def preset_config(name: str) -> PipelineConfig:
    if name == "paper":
        return paper_config()
    if name == "desk":
        return desk_config()
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def _coerce(value, current):
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _apply_section(obj, overrides: dict, section: str):
    if not isinstance(overrides, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(obj)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {', '.join(unknown)}")
    changes = {k: _coerce(v, getattr(obj, k)) for k, v in overrides.items()}
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in section {section!r}: {exc}") from exc


def apply_overrides(cfg: PipelineConfig, data: dict) -> PipelineConfig:
    data = dict(data or {})
    preset = data.pop("preset", None)
    if preset is not None and preset != cfg.preset:
        cfg = preset_config(preset)
    sections = {f.name for f in fields(cfg)} - {"preset"}
    unknown = sorted(set(data) - sections)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    changes = {name: _apply_section(getattr(cfg, name), data[name], name) for name in data}
    return replace(cfg, **changes)


def load_config(path=None, preset: str | None = None, seed: int | None = None) -> PipelineConfig:
    """Preset first, then the YAML file (if any), then the seed override."""
    cfg = preset_config(preset or "paper")
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping of sections")
        if preset is not None:
            data.pop("preset", None)
        cfg = apply_overrides(cfg, data)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value
    return yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False)
