"""Low-level car-following models behind one interface.

A model maps state windows of shape ``(..., h, 3)`` holding
(spacing, follower speed, relative speed) triples, oldest first, to commanded
accelerations of shape ``(...)``. Rule-based models only read the newest
state (``history = 1``); learned policies read the full 25-step window.

Parameter vectors are kept in SI units. Desired speeds, quoted in km/h in the
calibration bounds, are converted on definition.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np

from .errors import ArtifactError, SimulationError, TrainingError
from .neural import MlpNet, Normalizer, RecurrentNet, load_weights, save_weights
from .simulation import HISTORY

ACC_LIMIT = 4.0
KMH = 1.0 / 3.6
# Gipps' effective leader length is measured against this nominal vehicle length,
# because spacing here is a net bumper-to-bumper gap.
GIPPS_NOMINAL_LENGTH = 5.0


def clamp_acc(acc):
    return np.clip(acc, -ACC_LIMIT, ACC_LIMIT)


def state_window(states, history: int = HISTORY) -> np.ndarray:
    """Most recent ``history`` states, front-padded by repeating the first one."""
    states = np.asarray(states, dtype=float).reshape(-1, 3)
    if len(states) >= history:
        return states[-history:].copy()
    pad = np.repeat(states[:1], history - len(states), axis=0)
    return np.concatenate([pad, states])


@dataclass(frozen=True)
class RuleParams:
    """Base for parameter vectors. Fields may hold scalars or broadcastable arrays."""

    kind: ClassVar[str]
    bounds: ClassVar[dict[str, tuple[float, float]]]
    units: ClassVar[dict[str, str]]

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def bound_arrays(cls) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([cls.bounds[n][0] for n in cls.names()])
        hi = np.array([cls.bounds[n][1] for n in cls.names()])
        return lo, hi

    @classmethod
    def from_vector(cls, vec) -> RuleParams:
        """Build from ``vec[..., i]``; leading axes become array-valued fields."""
        vec = np.asarray(vec, dtype=float)
        values = [vec[..., i] for i in range(len(cls.names()))]
        if vec.ndim == 1:
            values = [float(x) for x in values]
        return cls(*values)

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=float)

    def within_bounds(self) -> bool:
        lo, hi = self.bound_arrays()
        vec = self.to_vector()
        return bool(np.all(vec >= lo) and np.all(vec <= hi))


@dataclass(frozen=True)
class IdmParams(RuleParams):
    a_max: float
    v_desired: float
    beta: float
    a_comf: float
    s_jam: float
    t_headway: float

    kind: ClassVar[str] = "idm"
    bounds: ClassVar[dict] = {
        "a_max": (0.1, 5.0), "v_desired": (1 * KMH, 150 * KMH), "beta": (1.0, 10.0),
        "a_comf": (0.1, 5.0), "s_jam": (0.1, 10.0), "t_headway": (0.1, 5.0),
    }
    units: ClassVar[dict] = {
        "a_max": "m/s^2", "v_desired": "m/s", "beta": "-", "a_comf": "m/s^2",
        "s_jam": "m", "t_headway": "s",
    }


@dataclass(frozen=True)
class GippsParams(RuleParams):
    a_des: float
    b_des: float
    lv_eff_len: float
    b_hat: float
    v_desired: float
    tau: float

    kind: ClassVar[str] = "gipps"
    bounds: ClassVar[dict] = {
        "a_des": (0.1, 5.0), "b_des": (0.1, 5.0), "lv_eff_len": (5.0, 15.0),
        "b_hat": (0.1, 5.0), "v_desired": (1 * KMH, 150 * KMH), "tau": (0.3, 3.0),
    }
    units: ClassVar[dict] = {
        "a_des": "m/s^2", "b_des": "m/s^2 (magnitude)", "lv_eff_len": "m",
        "b_hat": "m/s^2 (magnitude)", "v_desired": "m/s", "tau": "s",
    }


@dataclass(frozen=True)
class FvdParams(RuleParams):
    alpha: float
    lam: float
    v_desired: float
    b_len: float
    beta_form: float
    s_cut: float

    kind: ClassVar[str] = "fvd"
    bounds: ClassVar[dict] = {
        "alpha": (0.05, 20.0), "lam": (0.0, 3.0), "v_desired": (1 * KMH, 252 * KMH),
        "b_len": (0.1, 100.0), "beta_form": (0.1, 10.0), "s_cut": (10.0, 120.0),
    }
    units: ClassVar[dict] = {
        "alpha": "1/s", "lam": "1/s", "v_desired": "m/s", "b_len": "m",
        "beta_form": "-", "s_cut": "m",
    }


# Estimates calibrated on highD car-following events.
HIGHD_ESTIMATES = {
    "idm": IdmParams(0.36, 32.91 * KMH, 2.47, 0.55, 2.55, 0.60),
    "gipps": GippsParams(0.73, 2.30, 6.96, 1.92, 24.52 * KMH, 1.00),
    "fvd": FvdParams(0.22, 2.37, 24.00 * KMH, 2.95, 4.48, 56.35),
}

PARAMS_BY_KIND: dict[str, type[RuleParams]] = {
    cls.kind: cls for cls in (IdmParams, GippsParams, FvdParams)
}


def _unpack(windows):
    w = np.asarray(windows, dtype=float)
    return w[..., -1, 0], w[..., -1, 1], w[..., -1, 2]


def idm_kernel(p: IdmParams, s, v, dv):
    approach = -dv
    dynamic = v * p.t_headway + v * approach / (2.0 * np.sqrt(p.a_max * p.a_comf))
    s_star = p.s_jam + np.maximum(dynamic, 0.0)
    acc = p.a_max * (1.0 - (v / p.v_desired) ** p.beta - (s_star / s) ** 2)
    return clamp_acc(acc)


def gipps_kernel(p: GippsParams, s, v, dv):
    vl = v + dv
    ratio = v / p.v_desired
    v_free = v + 2.5 * p.a_des * p.tau * (1.0 - ratio) * np.sqrt(0.025 + ratio)
    gap = s - (p.lv_eff_len - GIPPS_NOMINAL_LENGTH)
    disc = (p.b_des * p.tau) ** 2 + p.b_des * (2.0 * gap - v * p.tau + vl ** 2 / p.b_hat)
    v_safe = -p.b_des * p.tau + np.sqrt(np.maximum(disc, 0.0))
    acc = (np.minimum(v_free, v_safe) - v) / p.tau
    acc = np.where(disc < 0.0, -p.b_des, np.maximum(acc, -p.b_des))
    return clamp_acc(acc)


def optimal_velocity(p: FvdParams, s):
    tb = np.tanh(p.beta_form)
    shaped = p.v_desired * (np.tanh(s / p.b_len - p.beta_form) + tb) / (1.0 + tb)
    return np.where(s >= p.s_cut, p.v_desired, shaped)


def fvd_kernel(p: FvdParams, s, v, dv):
    return clamp_acc(p.alpha * (optimal_velocity(p, s) - v) + p.lam * dv)


KERNELS = {"idm": idm_kernel, "gipps": gipps_kernel, "fvd": fvd_kernel}


def _require_gap(s):
    if np.any(np.asarray(s) <= 0.0):
        raise SimulationError("spacing must be positive; the episode should have terminated")


def idm_acc(p: IdmParams, window) -> float:
    s, v, dv = _unpack(window)
    _require_gap(s)
    return idm_kernel(p, s, v, dv)


def gipps_acc(p: GippsParams, window) -> float:
    s, v, dv = _unpack(window)
    _require_gap(s)
    return gipps_kernel(p, s, v, dv)


def fvd_acc(p: FvdParams, window) -> float:
    s, v, dv = _unpack(window)
    return fvd_kernel(p, s, v, dv)


class CarFollowingModel:
    """Interface: ``propose(windows) -> accelerations`` in [-4, 4] m/s^2."""

    kind: str = "base"
    history: int = 1

    def __init__(self, name: str | None = None):
        self.name = name or self.kind

    def propose(self, windows) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, windows):
        return self.propose(windows)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


class RuleBasedModel(CarFollowingModel):
    def __init__(self, params: RuleParams, name: str | None = None):
        self.params = params
        self.kind = params.kind
        self._kernel = KERNELS[params.kind]
        super().__init__(name)

    def propose(self, windows):
        return self._kernel(self.params, *_unpack(windows))


class ConstantModel(CarFollowingModel):
    """Always commands the same acceleration; a baseline and test fixture."""

    kind = "constant"

    def __init__(self, value: float = 0.0, name: str | None = None):
        self.value = float(value)
        super().__init__(name)

    def propose(self, windows):
        shape = np.shape(windows)[:-2]
        return np.full(shape, clamp_acc(self.value))


class NetPolicyModel(CarFollowingModel):
    """Learned policy: standardised window -> network -> 4·tanh.

    MLPs consume the flattened window; LSTMs unroll over it.
    """

    history = HISTORY

    def __init__(self, net, normalizer: Normalizer, kind: str, name: str | None = None):
        self.net = net
        self.normalizer = normalizer
        self.kind = kind
        super().__init__(name)

    def features(self, windows):
        x = self.normalizer(windows)
        if isinstance(self.net, MlpNet):
            x = x.reshape(x.shape[:-2] + (-1,))
        return x

    def raw(self, windows):
        out = self.net(self.features(windows))[..., 0]
        if not np.all(np.isfinite(out)):
            raise TrainingError(f"{self.name}: non-finite network activation")
        return out

    def propose(self, windows):
        return ACC_LIMIT * np.tanh(self.raw(windows))


def net_policy_acc(model: NetPolicyModel, window):
    return model.propose(window)


def make_rule_model(kind: str, params=None, name: str | None = None) -> RuleBasedModel:
    cls = PARAMS_BY_KIND[kind]
    if params is None:
        params = HIGHD_ESTIMATES[kind]
    elif not isinstance(params, RuleParams):
        params = cls.from_vector(params)
    return RuleBasedModel(params, name)


# --- parameter files ----------------------------------------------------------


def save_params(path, params: RuleParams, comment: str | None = None) -> Path:
    lines = [f"# {params.kind} car-following parameters"]
    if comment:
        lines.append(f"# {comment}")
    lines.append(f"kind = {params.kind}")
    for name in params.names():
        lines.append(f"{name} = {float(getattr(params, name))!r}  # {params.units[name]}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_key_values(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArtifactError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_params(path) -> RuleParams:
    values = read_key_values(path)
    kind = values.pop("kind", None)
    if kind not in PARAMS_BY_KIND:
        raise ArtifactError(f"{path}: unknown or missing model kind {kind!r}")
    cls = PARAMS_BY_KIND[kind]
    try:
        return cls(**{name: float(values[name]) for name in cls.names()})
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"{path}: bad or missing parameter ({exc})") from exc


def save_model(path, model: CarFollowingModel) -> Path:
    """Persist any low-level model; the file suffix follows the model type."""
    path = Path(path)
    if isinstance(model, RuleBasedModel):
        return save_params(path, model.params)
    if isinstance(model, ConstantModel):
        path.write_text(f"kind = constant\nvalue = {model.value!r}  # m/s^2\n", encoding="utf-8")
        return path
    if isinstance(model, NetPolicyModel):
        return save_weights(path, {"policy": model.net}, model.normalizer, {"kind": model.kind})
    raise ArtifactError(f"cannot serialise {model!r}")


def load_model(path, name: str | None = None) -> CarFollowingModel:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"model file {path} does not exist")
    if path.suffix == ".npz":
        nets, normalizer, meta = load_weights(path)
        if "policy" not in nets or normalizer is None:
            raise ArtifactError(f"{path} lacks a policy network or normalisation block")
        return NetPolicyModel(nets["policy"], normalizer, meta.get("kind", "net"), name)
    values = read_key_values(path)
    if values.get("kind") == "constant":
        return ConstantModel(float(values["value"]), name)
    return RuleBasedModel(load_params(path), name)

