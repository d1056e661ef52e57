from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensemble_follower.errors import ConfigError, SimulationError
from ensemble_follower.kinematics import (ClipContext, FollowState, KinematicsConfig, clip_jerk,
                                          limit_jerk, step_conventional, step_jerk_constrained)

CFG = KinematicsConfig()


def test_defaults():
    assert CFG.dt == 0.04
    assert CFG.max_acc_change == pytest.approx(0.4)


@pytest.mark.parametrize("kwargs", [dict(dt=0.0), dict(acc_min=4, acc_max=-4), dict(jerk_min=1, jerk_max=1)])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        KinematicsConfig(**kwargs)


def test_conventional_equilibrium():
    assert step_conventional(FollowState(30, 20, 0), 0.0, 20.0, CFG).as_tuple() == (30, 20, 0)


def test_conventional_trapezoid():
    out = step_conventional(FollowState(30, 20, 1), 0.0, 21.0, CFG)
    assert out.spacing == pytest.approx(30.04, abs=1e-12)
    assert out.fv_speed == 20 and out.rel_speed == 1


def test_conventional_no_reversing():
    out = step_conventional(FollowState(30, 0, 0), -1.0, 0.0, CFG)
    assert out.fv_speed == 0.0 and out.spacing == 30.0


def test_conventional_rejects_non_finite():
    with pytest.raises(SimulationError):
        step_conventional(FollowState(30, 20, 0), float("nan"), 20.0, CFG)


def test_clip_jerk_examples():
    acc, ctx = clip_jerk(4.0, ClipContext(0.0, True), CFG)
    assert acc == pytest.approx(0.4, abs=1e-12) and ctx.prev_acc_clip == acc
    acc, _ = clip_jerk(1.2, ClipContext(1.0, True), CFG)
    assert acc == 1.2
    acc, ctx = clip_jerk(-2.0, ClipContext(), CFG)
    assert acc == -2.0 and ctx.initialized


def test_out_of_range_command_is_clamped_first():
    state, ctx = step_jerk_constrained(FollowState(30, 20, 0), ClipContext(0.0, True), 8.0, 20.0, CFG)
    assert ctx.prev_acc_clip == pytest.approx(0.4, abs=1e-12)
    assert state.fv_speed - 20 == pytest.approx(0.016, abs=1e-12)


def test_jerk_free_commands_match_conventional(rng):
    state_a = state_b = FollowState(40, 20, 0)
    ctx = ClipContext()
    acc = 0.3
    for _ in range(200):
        acc = float(np.clip(acc + rng.uniform(-0.39, 0.39), -4, 4))
        vl = 20 + rng.normal()
        state_a, ctx = step_jerk_constrained(state_a, ctx, acc, vl, CFG)
        state_b = step_conventional(state_b, acc, vl, CFG)
        assert np.allclose(state_a.as_tuple(), state_b.as_tuple(), atol=1e-12, rtol=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=60))
def test_jerk_bound_property(cmds):
    ctx = ClipContext()
    state = FollowState(1e6, 20, 0)
    prev = None
    for cmd in cmds:
        state, ctx = step_jerk_constrained(state, ctx, cmd, 20.0, CFG)
        acc = ctx.prev_acc_clip
        assert abs(acc) <= 4.0
        if prev is not None:
            assert abs(acc - prev) <= 0.4 + 1e-12
        prev = acc


def test_limit_jerk_vectorised_matches_scalar(rng):
    cmd = rng.uniform(-4, 4, 100)
    prev = rng.uniform(-4, 4, 100)
    init = rng.random(100) < 0.8
    out = limit_jerk(cmd, prev, init, CFG)
    for i in range(100):
        expected, _ = clip_jerk(cmd[i], ClipContext(prev[i], bool(init[i])), CFG)
        assert out[i] == pytest.approx(expected, abs=1e-12)
