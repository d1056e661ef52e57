from __future__ import annotations

import numpy as np
import pytest

from ensemble_follower.calibration import (CalibrationResult, EventBatch, GaConfig, fitness,
                                           population_fitness, run_ga, simulate_model_on_event)
from ensemble_follower.cf_models import ConstantModel, IdmParams
from ensemble_follower.data import SynthConfig, TimeSeriesEvent
from ensemble_follower.errors import ConfigError

GT = IdmParams(**SynthConfig().ground_truth_params)


def crash_event():
    """Leader stops dead right in front of a fast follower."""
    n = 400
    lv = np.zeros(n)
    lv[:2] = 20.0
    return TimeSeriesEvent("crash", lv, np.full(n, 20.0), np.full(n, 5.0))


def test_ground_truth_reproduces_own_events(idm_events):
    model = SynthConfig().model()
    for ev in idm_events:
        out = simulate_model_on_event(model, ev)
        assert not out["collided"]
        assert np.max(np.abs(out["spacing_sim"] - ev.spacing)) < 1e-6


def test_full_braking_behind_accelerating_leader():
    n = 500
    lv = 10 + 0.5 * np.arange(n) * 0.04
    ev = TimeSeriesEvent("acc", lv, np.full(n, 10.0), np.full(n, 20.0))
    out = simulate_model_on_event(ConstantModel(-4.0), ev)
    assert not out["collided"]
    stopped = np.flatnonzero(out["speed_sim"] == 0)[0]
    assert np.all(np.diff(out["spacing_sim"][stopped:]) > 0)


def test_full_throttle_behind_stopped_leader():
    n = 500
    ev = TimeSeriesEvent("stop", np.zeros(n), np.full(n, 5.0), np.full(n, 20.0))
    assert simulate_model_on_event(ConstantModel(4.0), ev)["collided"]


def test_perfect_fitness_is_zero(idm_events):
    assert fitness(GT, idm_events) == pytest.approx(0.0, abs=1e-9)


def test_crash_adds_penalty(idm_events):
    events = list(idm_events) + [crash_event()]
    model = SynthConfig().model()
    sse = sso = 0.0
    for ev in events:
        out = simulate_model_on_event(model, ev)
        n = len(out["spacing_sim"])
        keep = slice(1, n - 1) if out["collided"] else slice(1, n)
        sse += np.sum((out["spacing_sim"][keep] - ev.spacing[keep]) ** 2)
        sso += np.sum(ev.spacing[keep] ** 2)
    expected = np.sqrt(sse / sso) + 1.0
    assert fitness(GT, events) == pytest.approx(expected, rel=1e-12)
    assert fitness(GT, events, crash_penalty=2.0) > fitness(GT, events)


def test_fitness_order_invariant(idm_events):
    p = IdmParams(1.0, 30.0, 4.0, 2.0, 2.5, 1.0)
    assert fitness(p, idm_events) == pytest.approx(fitness(p, idm_events[::-1]), rel=1e-12)


def test_population_matches_single(idm_events):
    batch = EventBatch(idm_events)
    pop = np.array([GT.to_vector(), [1.0, 30.0, 4.0, 2.0, 2.5, 1.0]])
    fit, crashes = population_fitness("idm", pop, batch)
    for row, value in zip(pop, fit):
        assert value == pytest.approx(fitness(IdmParams.from_vector(row), batch), rel=1e-12)
    assert crashes.tolist() == [0, 0]


def test_collapsed_bounds(idm_events):
    point = GT.to_vector()
    result = run_ga("idm", idm_events[:2], GaConfig(population=6, max_generations=1), bounds=(point, point))
    assert np.allclose(result.best_params.to_vector(), point)


def test_ga_deterministic_monotone_and_bounded(idm_events):
    cfg = GaConfig(population=12, max_generations=6, seed=4)
    seen = []
    a = run_ga("gipps", idm_events[:3], cfg, progress=lambda g, f: seen.append(g))
    b = run_ga("gipps", idm_events[:3], cfg)
    assert a.best_params == b.best_params and a.fitness_history == b.fitness_history
    assert all(x >= y for x, y in zip(a.fitness_history, a.fitness_history[1:]))
    assert a.best_fitness == min(a.fitness_history)
    assert a.best_params.within_bounds()
    assert seen == list(range(1, 7))


def test_stall_stops_early(idm_events):
    point = GT.to_vector()
    result = run_ga("idm", idm_events[:2], GaConfig(population=4, max_generations=50, stall_generations=3),
                    bounds=(point, point))
    assert result.generations == 3


def test_crashing_result_is_flagged(caplog):
    point = np.array([5.0, 40.0, 1.0, 5.0, 0.1, 0.1])
    result = run_ga("idm", [crash_event()], GaConfig(population=4, max_generations=1), bounds=(point, point))
    assert result.crashes_at_best == 1 and not result.accepted
    assert "crashes" in caplog.text


def test_result_text():
    text = CalibrationResult("idm", GT, 0.01, [0.02, 0.01]).to_text()
    assert "param.a_max = 1.2" in text and "crashes_at_best = 0" in text


def test_ga_config_validation():
    with pytest.raises(ConfigError):
        GaConfig(population=1)
    with pytest.raises(ConfigError):
        GaConfig(mutation_prob=1.5)
