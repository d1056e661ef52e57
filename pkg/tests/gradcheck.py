"""Central finite-difference gradient checks shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np

STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_net(net, x: np.ndarray, rng: np.random.Generator, max_entries: int = 40) -> float:
    """Worst relative error over every parameter tensor for the loss sum(y * r)."""
    y, cache = net.forward(x)
    r = rng.normal(size=y.shape)
    grads, _ = net.backward(cache, r)
    worst = 0.0
    for name, param in net.params.items():
        flat = param.reshape(-1)
        idx = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + STEP
            up = np.sum(net(x) * r)
            flat[i] = old - STEP
            down = np.sum(net(x) * r)
            flat[i] = old
            numeric[j] = (up - down) / (2 * STEP)
        worst = max(worst, relative_error(grads[name].reshape(-1)[idx], numeric))
    return worst
