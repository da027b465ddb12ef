import numpy as np
import pytest

from dipfc.config import Event, SimConfig, config_from_dict
from dipfc.engine import ACTIVE, BYPASS, FAULT, event_ticks, run, segment_bounds
from dipfc.scenario import echo_gains, load_config, resolve_gains


def idle(t_end=0.1, **sim):
    sc = load_config("table1-scenario1", [f"sim.t_end={t_end}"])
    return sc.replace(events=(), sim=SimConfig(t_end=t_end, **sim))


def test_idle_stays_at_equilibrium():
    series, summary = run(idle())
    for c in "abc":
        assert np.max(np.abs(series[f"i_line_{c}"])) < 1e-6
        assert np.all(series[f"v_dclink_{c}"] == 0.0)
        assert np.all(series[f"i_cm_{c}"] == 0.0)
    assert np.max(np.abs(series["v_bus"] - 800.0)) < 0.01 * 800.0
    assert np.all(series["mode"] == BYPASS)
    assert len(summary.segments) == 1


def test_channels_share_time_base_and_are_finite(run_preset):
    series, _, _ = run_preset("table1-scenario1")
    n = len(series)
    for name in series.names:
        assert len(series[name]) == n, name
        assert np.all(np.isfinite(series[name])), name
    assert np.allclose(np.diff(series.time), 50e-6)


def test_event_ticks_quantized():
    sc = idle().replace(events=(Event(0.30004, "bypass"), Event(0.3, "bypass")))
    assert event_ticks(sc, sc.sim) == [3001, 3000]


def test_segments_follow_events(run_preset):
    _, summary, _ = run_preset("table1-scenario2")
    bounds = [(s["start"], s["end"]) for s in summary.segments]
    assert bounds == pytest.approx([(0.0, 0.3), (0.3, 0.5), (0.5, 0.6)])
    assert [s["mode"] for s in summary.segments] == ["bypass", "active", "active"]
    assert summary.segments[-1]["window_start"] == pytest.approx(0.56)


def test_modes_in_scenario1(run_preset):
    series, _, _ = run_preset("table1-scenario1")
    mode = series["mode"]
    assert np.all(mode[series.time < 0.3] == BYPASS)
    assert mode[-1] == ACTIVE


def test_fault_event_latches():
    sc = load_config("table1-scenario1", ["sim.t_end=0.4"])
    sc = sc.replace(events=sc.events + (Event(0.35, "fault"), Event(0.37, "enable_controller")))
    series, summary = run(sc)
    assert series["mode"][-1] == FAULT
    assert any(n["kind"] == "fault" for n in summary.notes)
    late = series.time > 0.36
    assert np.all(series["v_series_a"][late] == 0.0)


def test_determinism():
    sc = load_config("table1-scenario1", ["sim.t_end=0.33"])
    a, _ = run(sc)
    b, _ = run(sc)
    for name in a.names:
        assert np.array_equal(a[name], b[name]), name


def test_echoed_config_rerun_bit_identical(run_preset):
    series, _, _ = run_preset("table1-scenario1")
    sc = load_config("table1-scenario1")
    echoed = config_from_dict(echo_gains(sc, resolve_gains(sc)).to_dict())
    again, _ = run(echoed)
    for name in series.names:
        assert np.array_equal(series[name], again[name]), name


def test_dt_halving_changes_rms_little(run_preset):
    _, summary, _ = run_preset("table1-scenario1")
    sc = load_config("table1-scenario1", ["sim.dt_plant=5e-7", "sim.record_decimation=100"])
    _, fine = run(sc)
    for key in ("I_rms", "v_bus_mean", "v_dclink_mean"):
        a, b = summary.segments[-1][key], fine.segments[-1][key]
        assert abs(a - b) / abs(a) < 1e-3, key


def test_empty_run():
    series, summary = run(idle(t_end=0.0))
    assert len(series) == 0
    assert summary.segments == []
    assert segment_bounds(idle(t_end=0.0), SimConfig(t_end=0.0)) == []


def test_decimation_10():
    series, _ = run(idle(t_end=0.001, record_decimation=10))
    assert np.allclose(np.diff(series.time), 10e-6, rtol=0, atol=1e-12)
