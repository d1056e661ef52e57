"""High-level coordinators over a frozen roster of low-level models.

``discrete`` policies pick one model per step from a Q-network; ``convex``
policies blend all models with softmax weights from the actor's mean logits.
Model indices are 0-based positions in the roster.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cf_models import ACC_LIMIT, CarFollowingModel, load_model, save_model
from .errors import ArtifactError, ConfigError, SimulationError, TrainingError
from .neural import MlpNet, Normalizer, load_weights, save_weights
from .simulation import HISTORY

BUNDLE_FORMAT = "ensemble-follower-policy"
BUNDLE_VERSION = 1
SIMPLEX_TOL = 1e-6


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def blend(weights: np.ndarray, accs: np.ndarray) -> np.ndarray:
    """Convex combination of ingredient accelerations.

    ``weights`` is (..., k) and ``accs`` is (k, ...). Raises if the weights leave
    the simplex or the result leaves the ingredients' range.
    """
    if np.any(weights < 0) or np.any(np.abs(weights.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise SimulationError("blend weights are not on the probability simplex")
    out = np.einsum("...k,k...->...", weights, accs)
    lo, hi = accs.min(axis=0), accs.max(axis=0)
    slack = 1e-9 * (1.0 + np.abs(accs).max(axis=0))
    if np.any(out < lo - slack) or np.any(out > hi + slack):
        raise SimulationError("blended acceleration escaped the ingredients' range")
    return np.clip(out, lo, hi)


class EnsemblePolicy(CarFollowingModel):
    history = HISTORY

    def __init__(self, mode: str, net: MlpNet, models: list[CarFollowingModel],
                 normalizer: Normalizer, name: str | None = None):
        if mode not in ("discrete", "convex"):
            raise ConfigError(f"mode must be 'discrete' or 'convex', got {mode!r}")
        if not models:
            raise ConfigError("an ensemble needs at least one low-level model")
        if net.sizes[-1] != len(models):
            raise ConfigError(f"network emits {net.sizes[-1]} outputs for {len(models)} models")
        self.mode = mode
        self.net = net
        self.models = list(models)
        self.normalizer = normalizer
        self.kind = f"ensemble_{mode}"
        super().__init__(name or ("ef_ddqn" if mode == "discrete" else "ef_ppo"))

    @property
    def k(self) -> int:
        return len(self.models)

    @property
    def model_names(self) -> list[str]:
        return [m.name for m in self.models]

    def features(self, windows) -> np.ndarray:
        x = self.normalizer(windows)
        return x.reshape(x.shape[:-2] + (-1,))

    def _outputs(self, windows) -> np.ndarray:
        out = self.net(self.features(windows))
        if not np.all(np.isfinite(out)):
            raise TrainingError(f"{self.name}: non-finite high-level network output")
        return out

    def q_values(self, windows) -> np.ndarray:
        return self._outputs(windows)

    def select_model(self, windows) -> np.ndarray:
        """Greedy model index; ``argmax`` resolves ties to the lowest index."""
        if self.mode != "discrete":
            raise ConfigError("select_model needs a discrete policy")
        return np.argmax(self.q_values(windows), axis=-1)

    def blend_weights(self, windows) -> np.ndarray:
        if self.mode != "convex":
            raise ConfigError("blend_weights needs a convex policy")
        return softmax(self._outputs(windows))

    def ingredient_accs(self, windows) -> np.ndarray:
        """(k, ...) accelerations proposed by every low-level model."""
        windows = np.asarray(windows, dtype=float)
        return np.stack([m.propose(windows[..., -m.history:, :]) for m in self.models])

    def decide(self, windows):
        """Return ``(acc, decision, ingredient_accs)``.

        ``decision`` is the chosen index (discrete) or the weight vector (convex).
        """
        accs = self.ingredient_accs(windows)
        if self.mode == "discrete":
            choice = self.select_model(windows)
            acc = np.take_along_axis(accs, choice[None, ...], axis=0)[0]
            return np.clip(acc, -ACC_LIMIT, ACC_LIMIT), choice, accs
        weights = self.blend_weights(windows)
        return blend(weights, accs), weights, accs

    def propose(self, windows) -> np.ndarray:
        return self.decide(windows)[0]

    act = propose


def select_model(policy: EnsemblePolicy, window):
    return policy.select_model(window)


def blend_weights(policy: EnsemblePolicy, window):
    return policy.blend_weights(window)


def act(policy: EnsemblePolicy, window):
    return policy.act(window)


# --- bundles -----------------------------------------------------------------


def _model_filename(model: CarFollowingModel) -> str:
    from .cf_models import NetPolicyModel
    suffix = ".npz" if isinstance(model, NetPolicyModel) else ".params"
    return f"{model.name}{suffix}"


def save_policy(directory, policy: EnsemblePolicy, roster_paths: dict[str, str] | None = None) -> Path:
    """Write ``manifest.json``, the high-level weights and (unless given) the roster files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    roster = []
    for model in policy.models:
        if roster_paths and model.name in roster_paths:
            rel = roster_paths[model.name]
        else:
            (directory / "models").mkdir(exist_ok=True)
            rel = f"models/{_model_filename(model)}"
            save_model(directory / rel, model)
        roster.append({"name": model.name, "kind": model.kind, "path": str(rel)})
    save_weights(directory / "high_level.npz", {"high_level": policy.net}, policy.normalizer,
                 {"mode": policy.mode})
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "name": policy.name,
        "mode": policy.mode,
        "history": policy.history,
        "roster": roster,
        "high_level": "high_level.npz",
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_policy(path) -> EnsemblePolicy:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"cannot read policy manifest {path}: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT or manifest.get("version") != BUNDLE_VERSION:
        raise ArtifactError(f"{path} is not a version-{BUNDLE_VERSION} policy bundle")
    base = path.parent
    models = []
    for entry in manifest["roster"]:
        model_path = Path(entry["path"])
        if not model_path.is_absolute():
            model_path = base / model_path
        models.append(load_model(model_path, entry["name"]))
    nets, normalizer, _ = load_weights(base / manifest["high_level"])
    if normalizer is None:
        raise ArtifactError(f"{path}: high-level weights lack normalisation stats")
    return EnsemblePolicy(manifest["mode"], nets["high_level"], models, normalizer,
                          manifest.get("name"))
