from __future__ import annotations

import numpy as np
import pytest

from ensemble_follower.data import SynthConfig, synthesize_events


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def idm_events():
    """Small noise-free IDM corpus shared by the slower tests."""
    return synthesize_events(SynthConfig(n_events=8, duration=16.0, seed=3))


def window(s, v, dv, history=1):
    return np.tile(np.array([[s, v, dv]], dtype=float), (history, 1))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
