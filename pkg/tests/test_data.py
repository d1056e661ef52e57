from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensemble_follower.data import (SynthConfig, TimeSeriesEvent, applied_accel, derive_fields,
                                    filter_events, load_events, split, split_counts,
                                    synthesize_events, write_events)
from ensemble_follower.errors import ConfigError, DataError

HEADER = "event_id,t,lv_speed,fv_speed,spacing\n"


def make_event(event_id="e", seconds=20.0, fv=20.0, dt=0.04):
    n = int(round(seconds / dt))
    fv = np.broadcast_to(np.asarray(fv, dtype=float), (n,))
    return TimeSeriesEvent(event_id, np.full(n, 20.0), fv, np.full(n, 30.0), dt)


def write_csv(path, rows):
    path.write_text(HEADER + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def test_load_single_event(tmp_path):
    rows = [("a", round(i * 0.04, 10), 20, 19, 30) for i in range(375)]
    events = load_events(write_csv(tmp_path / "e.csv", rows))
    assert len(events) == 1 and len(events[0]) == 375


def test_load_groups_and_orders(tmp_path):
    rows = [("b", round(i * 0.04, 10), 20, 19, 30) for i in range(5)][::-1]
    rows += [("a", round(i * 0.04, 10), 10, 9, 15) for i in range(4)]
    events = load_events(write_csv(tmp_path / "e.csv", rows))
    assert [ev.event_id for ev in events] == ["b", "a"]
    assert np.allclose(events[0].t, np.arange(5) * 0.04)


def test_nonuniform_dt_names_row(tmp_path):
    rows = [("a", round(i * 0.04, 10), 20, 19, 30) for i in range(10)]
    rows[6] = ("a", 0.28, 20, 19, 30)
    with pytest.raises(DataError, match=r"e\.csv:8"):
        load_events(write_csv(tmp_path / "e.csv", rows))


def test_negative_spacing_rejects_event(tmp_path):
    rows = [("a", round(i * 0.04, 10), 20, 19, 30) for i in range(10)]
    rows += [("b", round(i * 0.04, 10), 20, 19, -1.0 if i == 3 else 30) for i in range(10)]
    diagnostics = []
    events = load_events(write_csv(tmp_path / "e.csv", rows), diagnostics=diagnostics)
    assert [ev.event_id for ev in events] == ["a"]
    assert len(diagnostics) == 1 and "b" in diagnostics[0]


def test_missing_column(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("event_id,t,lv_speed,fv_speed\na,0,1,1\n")
    with pytest.raises(DataError, match="spacing"):
        load_events(path)


def test_non_numeric_cell(tmp_path):
    with pytest.raises(DataError, match="non-numeric"):
        load_events(write_csv(tmp_path / "e.csv", [("a", 0, "fast", 1, 1)]))


def test_schema_mapping(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("id,time,v_l,v_f,gap\n" + "".join(f"x,{i * 0.04:.2f},20,19,30\n" for i in range(5)))
    schema = {"event_id": "id", "t": "time", "lv_speed": "v_l", "fv_speed": "v_f", "spacing": "gap"}
    assert len(load_events(path, schema)[0]) == 5


def test_round_trip(tmp_path):
    events = synthesize_events(SynthConfig(n_events=3, duration=15, seed=4))
    first = write_events(events, tmp_path / "a.csv")
    again = write_events(load_events(first), tmp_path / "b.csv")
    assert first.read_bytes() == again.read_bytes()


def test_event_invariants():
    with pytest.raises(DataError):
        TimeSeriesEvent("x", [1, 2], [1, 2], [1, 0])
    with pytest.raises(DataError):
        TimeSeriesEvent("x", [1, 2], [1, -2], [1, 1])
    with pytest.raises(DataError):
        TimeSeriesEvent("x", [1, 2, 3], [1, 2], [1, 1])


def test_event_does_not_freeze_caller_arrays():
    lv = np.ones(5)
    TimeSeriesEvent("x", lv, lv, lv)
    lv[0] = 2.0


def test_filter_examples():
    short = make_event("short", 10.0)
    fv = np.full(500, 20.0)
    fv[100:250] = 0.0
    stopped = make_event("stopped", 20.0, fv)
    fine = make_event("fine", 20.0)
    kept = filter_events([short, stopped, fine])
    assert [ev.event_id for ev in kept] == ["fine"]
    assert filter_events(kept) == kept


def test_filter_keeps_exactly_five_second_crawl():
    fv = np.full(500, 20.0)
    fv[100:225] = 0.5
    assert len(filter_events([make_event("x", 20.0, fv)])) == 1


def test_split_counts():
    assert split_counts(100, (0.7, 0.15, 0.15)) == [70, 15, 15]
    assert split_counts(20, (0.7, 0.15, 0.15)) == [14, 3, 3]


def test_split_deterministic_and_partitioning():
    events = [make_event(f"e{i}", 15.0) for i in range(100)]
    a, b = split(events, seed=1), split(events, seed=1)
    assert [len(a.train), len(a.validation), len(a.test)] == [70, 15, 15]
    assert [e.event_id for e in a.train] == [e.event_id for e in b.train]
    ids = [e.event_id for part in (a.train, a.validation, a.test) for e in part]
    assert sorted(ids) == sorted(e.event_id for e in events)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 60), st.integers(0, 2**31))
def test_split_partition_property(n, seed):
    events = [make_event(f"e{i}", 1.0) for i in range(n)]
    ds = split(events, seed=seed)
    ids = [e.event_id for part in (ds.train, ds.validation, ds.test) for e in part]
    assert len(ids) == len(set(ids)) == n
    assert abs(len(ds.train) - 0.7 * n) <= 1


def test_split_errors():
    with pytest.raises(DataError):
        split([make_event("a"), make_event("b")])
    with pytest.raises(ConfigError):
        split([make_event(str(i)) for i in range(5)], ratios=(0.5, 0.5, 0.5))


def test_derive_fields():
    ev = make_event("x", 15.0)
    assert np.all(derive_fields(ev)["relative_speed"] == 0)
    assert np.allclose(derive_fields(ev)["fv_accel"], 0.0)
    ramp = TimeSeriesEvent("r", np.full(251, 5.0), np.linspace(0, 10, 251), np.full(251, 30.0))
    assert np.allclose(derive_fields(ramp)["fv_accel"], 1.0)
    assert np.allclose(applied_accel(ramp), 1.0)


def test_synth_constant_leader_at_equilibrium():
    cfg = SynthConfig(n_events=3, duration=20, leader_profile="constant", gap_perturbation=0.0, seed=2)
    for ev in synthesize_events(cfg):
        assert np.ptp(ev.spacing) < 1e-6


def test_synth_deterministic():
    cfg = SynthConfig(n_events=4, duration=15, seed=9)
    a, b = synthesize_events(cfg), synthesize_events(cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.spacing, y.spacing) and np.array_equal(x.lv_speed, y.lv_speed)


def test_synth_brake_pulse_floor():
    cfg = SynthConfig(n_events=3, duration=20, leader_profile="brake_pulse", seed=1,
                      leader_speed_range=(15.0, 30.0), pulse_floor=8.0)
    for ev in synthesize_events(cfg):
        assert ev.lv_speed.min() == pytest.approx(8.0)


def test_synth_events_pass_filter():
    events = synthesize_events(SynthConfig(n_events=6, duration=15, seed=5))
    assert len(filter_events(events)) == len(events)
    assert all(len(ev) >= 375 for ev in events)


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(duration=10)
    with pytest.raises(ConfigError):
        SynthConfig(noise_std=-1)
    with pytest.raises(ConfigError):
        SynthConfig(leader_profile="zigzag")
