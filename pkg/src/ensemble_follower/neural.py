"""Small fixed-architecture networks with hand-written backpropagation.

Two architectures are supported: a rectifier MLP and a single-layer LSTM with
a linear head. Both keep their parameters in a flat ``dict`` of arrays so the
optimizer, the gradient checker and the serializer can treat them uniformly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArtifactError, TrainingError

WEIGHTS_VERSION = 1


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class MlpNet:
    """Feed-forward net: rectifier hidden layers, linear or tanh output."""

    kind = "mlp"

    def __init__(self, sizes, params: dict[str, np.ndarray], output_activation: str = "linear"):
        if output_activation not in ("linear", "tanh"):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.sizes = list(sizes)
        self.params = params
        self.output_activation = output_activation
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if params[f"W{i}"].shape != (fan_in, fan_out) or params[f"b{i}"].shape != (fan_out,):
                raise ValueError(f"layer {i} parameters do not match sizes {self.sizes}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, output_activation: str = "linear") -> MlpNet:
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"W{i}"] = _uniform_fan_in(rng, fan_in, (fan_in, fan_out))
            params[f"b{i}"] = _uniform_fan_in(rng, fan_in, (fan_out,))
        return cls(sizes, params, output_activation)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def arch(self) -> dict:
        return {"kind": self.kind, "sizes": self.sizes, "output_activation": self.output_activation}

    def copy(self) -> MlpNet:
        return MlpNet(self.sizes, {k: v.copy() for k, v in self.params.items()}, self.output_activation)

    def forward(self, x: np.ndarray):
        """Return ``(output, cache)`` for a batch ``x`` of shape (B, in) or (in,)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected {self.sizes[0]} input features, got {x.shape[-1]}")
        inputs, pre = [], []
        h = x
        for i in range(self.n_layers):
            inputs.append(h)
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            pre.append(z)
            if i < self.n_layers - 1:
                h = np.maximum(z, 0.0)
            elif self.output_activation == "tanh":
                h = np.tanh(z)
            else:
                h = z
        return h, (inputs, pre, h)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of a scalar loss given dLoss/dOutput.

        Returns ``(param_grads, grad_input)``; batch dimensions are summed.
        """
        inputs, pre, out = cache
        grad = np.asarray(grad_out, dtype=float)
        if grad.shape != out.shape:
            raise ValueError(f"upstream gradient shape {grad.shape} != output shape {out.shape}")
        if self.output_activation == "tanh":
            grad = grad * (1.0 - out ** 2)
        grads = {}
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                grad = grad * (pre[i] > 0)
            h = inputs[i]
            grads[f"W{i}"] = h.reshape(-1, h.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
            grads[f"b{i}"] = grad.reshape(-1, grad.shape[-1]).sum(axis=0)
            grad = grad @ self.params[f"W{i}"].T
        return grads, grad


class RecurrentNet:
    """Single LSTM layer unrolled over the window, linear head on the last hidden state.

    Gate blocks in the fused weight matrix are ordered input, forget, output, cell.
    The cell carries no state between calls.
    """

    kind = "lstm"

    def __init__(self, n_input: int, width: int, n_output: int, params: dict[str, np.ndarray]):
        self.n_input, self.width, self.n_output = n_input, width, n_output
        self.params = params
        expected = {"W": (n_input + width, 4 * width), "b": (4 * width,),
                    "Wy": (width, n_output), "by": (n_output,)}
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name} has shape {params[name].shape}, expected {shape}")

    @classmethod
    def init(cls, n_input: int, width: int, n_output: int, rng: np.random.Generator,
             forget_bias: float = 1.0) -> RecurrentNet:
        fan_in = n_input + width
        b = _uniform_fan_in(rng, fan_in, (4 * width,))
        b[width:2 * width] += forget_bias
        params = {
            "W": _uniform_fan_in(rng, fan_in, (fan_in, 4 * width)),
            "b": b,
            "Wy": _uniform_fan_in(rng, width, (width, n_output)),
            "by": _uniform_fan_in(rng, width, (n_output,)),
        }
        return cls(n_input, width, n_output, params)

    def arch(self) -> dict:
        return {"kind": self.kind, "n_input": self.n_input, "width": self.width,
                "n_output": self.n_output}

    def copy(self) -> RecurrentNet:
        return RecurrentNet(self.n_input, self.width, self.n_output,
                            {k: v.copy() for k, v in self.params.items()})

    def cell(self, x_t, h, c):
        """One LSTM step; returns ``(h', c', gates)``."""
        n = self.width
        z = np.concatenate([x_t, h], axis=-1) @ self.params["W"] + self.params["b"]
        i = _sigmoid(z[..., :n])
        f = _sigmoid(z[..., n:2 * n])
        o = _sigmoid(z[..., 2 * n:3 * n])
        g = np.tanh(z[..., 3 * n:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        return h_new, c_new, (i, f, o, g)

    def forward(self, x: np.ndarray):
        """``x`` has shape (B, T, n_input) or (T, n_input); returns ``(output, cache)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_input:
            raise ValueError(f"expected {self.n_input} input features, got {x.shape[-1]}")
        batch_shape = x.shape[:-2]
        h = np.zeros(batch_shape + (self.width,))
        c = np.zeros_like(h)
        hs, cs, gates = [h], [c], []
        for t in range(x.shape[-2]):
            h, c, g = self.cell(x[..., t, :], h, c)
            hs.append(h)
            cs.append(c)
            gates.append(g)
        y = h @ self.params["Wy"] + self.params["by"]
        return y, (x, hs, cs, gates)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Backpropagation through the full unrolled window."""
        x, hs, cs, gates = cache
        n = self.width
        grad_out = np.asarray(grad_out, dtype=float)
        h_last = hs[-1]
        flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
        grads = {
            "Wy": flat(h_last).T @ flat(grad_out),
            "by": flat(grad_out).sum(axis=0),
            "W": np.zeros_like(self.params["W"]),
            "b": np.zeros_like(self.params["b"]),
        }
        dh = grad_out @ self.params["Wy"].T
        dc = np.zeros_like(dh)
        dx = np.zeros_like(x)
        for t in reversed(range(x.shape[-2])):
            i, f, o, g = gates[t]
            tanh_c = np.tanh(cs[t + 1])
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c ** 2)
            di = dc * g
            dg = dc * i
            df = dc * cs[t]
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                 do * o * (1 - o), dg * (1 - g ** 2)], axis=-1)
            inp = np.concatenate([x[..., t, :], hs[t]], axis=-1)
            grads["W"] += flat(inp).T @ flat(dz)
            grads["b"] += flat(dz).sum(axis=0)
            dinp = dz @ self.params["W"].T
            dx[..., t, :] = dinp[..., :self.n_input]
            dh = dinp[..., self.n_input:]
            dc = dc * f
        return grads, dx


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float | None = None) -> dict:
    """Bias-corrected adaptive-moment update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    lr = state.lr if lr is None else lr
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass(frozen=True)
class Normalizer:
    """Per-feature standardisation of (spacing, follower speed, relative speed)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(std > 0)):
            raise ValueError("normalisation stats must be finite with positive std")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def identity(cls, n: int = 3) -> Normalizer:
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def fit(cls, samples: np.ndarray) -> Normalizer:
        samples = np.asarray(samples, dtype=float).reshape(-1, np.shape(samples)[-1])
        std = samples.std(axis=0)
        return cls(samples.mean(axis=0), np.where(std > 1e-8, std, 1.0))

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return (np.asarray(windows, dtype=float) - self.mean) / self.std


def build_net(arch: dict, params: dict):
    if arch["kind"] == "mlp":
        return MlpNet(arch["sizes"], params, arch.get("output_activation", "linear"))
    if arch["kind"] == "lstm":
        return RecurrentNet(arch["n_input"], arch["width"], arch["n_output"], params)
    raise ArtifactError(f"unknown network kind {arch['kind']!r}")


def save_weights(path, nets: dict, normalizer: Normalizer | None = None, meta: dict | None = None):
    """Write named networks (and optional normalisation stats) to one ``.npz`` file."""
    arrays = {"__version__": np.array(WEIGHTS_VERSION)}
    header = {"nets": {}, "meta": meta or {}}
    for net_name, net in nets.items():
        header["nets"][net_name] = net.arch()
        for pname, value in net.params.items():
            arrays[f"{net_name}/{pname}"] = value
    if normalizer is not None:
        arrays["norm/mean"] = normalizer.mean
        arrays["norm/std"] = normalizer.std
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_weights(path):
    """Inverse of :func:`save_weights`: ``(nets, normalizer, meta)``."""
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"cannot read weight file {path}: {exc}") from exc
    with data:
        if "__version__" not in data or int(data["__version__"]) != WEIGHTS_VERSION:
            raise ArtifactError(f"{path} is not a version-{WEIGHTS_VERSION} weight file")
        header = json.loads(str(data["__header__"]))
        nets = {}
        for net_name, arch in header["nets"].items():
            prefix = f"{net_name}/"
            params = {k[len(prefix):]: data[k].copy() for k in data.files if k.startswith(prefix)}
            nets[net_name] = build_net(arch, params)
        normalizer = None
        if "norm/mean" in data:
            normalizer = Normalizer(data["norm/mean"], data["norm/std"])
    return nets, normalizer, header["meta"]
