import json
import math

import pytest
from hypothesis import given, strategies as st

from dipfc.config import ConfigError, GainConfig, ScenarioConfig, Target, config_from_dict
from dipfc.phasor import Phasor, injected_power, operating_area
from dipfc.scenario import (PRESETS, EnvelopeViolationError, apply_overrides, check_envelope, echo_gains,
                            feeder2_power, load_config, resolve_gains, resolve_references, resolve_target)
from dipfc.units import UnitError, parse_quantity


def test_presets_load():
    for name in PRESETS:
        sc = load_config(name)
        assert sc.name == name


def test_table1_scenario1_values():
    sc = load_config("table1-scenario1")
    assert sc.grid.v_g == 400.0
    assert sc.hardware.l_dm == 100e-6 and sc.hardware.l_cm == 2e-3
    assert sc.events[0].time == 0.3 and sc.events[0].action == "enable_controller"
    assert sc.grid.line.total == pytest.approx(complex(0.328, 0.16))


def test_missing_vg():
    with pytest.raises(ConfigError, match="grid.v_g"):
        config_from_dict({"grid": {"f_g": 50}})


def test_unknown_key():
    with pytest.raises(ConfigError, match="hardware.l_xyz: unknown key"):
        config_from_dict({"grid": {"v_g": 400}, "hardware": {"l_xyz": 1}})
    with pytest.raises(ConfigError, match="bogus: unknown key"):
        config_from_dict({"grid": {"v_g": 400}, "bogus": 1})


def test_validation_names_field():
    with pytest.raises(ConfigError, match="sim.dt_plant"):
        config_from_dict({"grid": {"v_g": 400}, "sim": {"dt_plant": 3e-6}})


def test_per_km_round_trip():
    sc = config_from_dict({"grid": {"v_g": "400 V", "line_r": 0.164, "line_x": 0.080, "cable_length": "1.0 km"}})
    assert sc.grid.line.total == pytest.approx(complex(0.328, 0.16), rel=1e-12)


def test_unit_suffixes():
    sc = config_from_dict({"grid": {"v_g": 400}, "hardware": {"l_dm": "120 uH", "c_dclink": "2.2 mF",
                                                              "l_cm": "2.0 mH"}})
    assert sc.hardware.l_dm == pytest.approx(120e-6)
    assert sc.hardware.c_dclink == pytest.approx(2.2e-3)
    assert parse_quantity("10 deg", "rad") == pytest.approx(math.radians(10))
    with pytest.raises(UnitError):
        parse_quantity("3 furlongs", "H")


def test_gain_forms():
    sc = config_from_dict({"grid": {"v_g": 400}, "gains": {"cm": {"kp": 10, "ki": 261}, "dm": [1.16, 1160],
                                                           "voltage": "auto"}})
    assert sc.gains.cm == (10.0, 261.0) and sc.gains.dm == (1.16, 1160.0) and sc.gains.voltage is None


def test_toml_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[grid]\nv_g = 400\nf_g = = 50\n")
    with pytest.raises(ConfigError, match=r"line 3.*column"):
        load_config(str(p))


def test_json_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"grid": {"v_g": 400,}}')
    with pytest.raises(ConfigError, match=r"line 1, column"):
        load_config(str(p))


def test_toml_file(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('name = "t"\n[grid]\nv_g = "400 V"\n[[events]]\ntime = "300 ms"\naction = "enable_controller"\n'
                 '[events.target]\ni_rms = 50\n')
    sc = load_config(str(p))
    assert sc.events[0].time == pytest.approx(0.3)
    assert sc.events[0].target.i_rms == 50.0


def test_overrides():
    sc = load_config("table1-scenario1", ["sim.t_end=0.4", 'hardware.l_dm="120 uH"', "events.0.time=0.25"])
    assert sc.sim.t_end == 0.4
    assert sc.hardware.l_dm == pytest.approx(120e-6)
    assert sc.events[0].time == 0.25
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_event_order_enforced():
    with pytest.raises(ConfigError, match="non-decreasing"):
        config_from_dict({"grid": {"v_g": 400}, "events": [{"time": 0.5, "action": "bypass"},
                                                           {"time": 0.3, "action": "bypass"}]})


def test_json_dump_round_trip():
    sc = load_config("table1-scenario2")
    again = config_from_dict(json.loads(json.dumps(sc.to_dict())))
    assert again == sc


# ---------------------------------------------------------------------------
# reference resolution

V1 = Phasor(400 / math.sqrt(3), 0.0)
Z = complex(0.328, 0.16)


def test_zero_target_identical_feeders():
    res = resolve_target(Target(p=0.0, q=0.0), V1, V1, Z, 50.0)
    assert res.command.r == 0.0
    assert res.current == 0.0


def test_scenario2_target_feasible_at_boundary():
    sc = load_config("table1-scenario2")
    _, env = operating_area(sc.grid.v1, sc.grid.v2, sc.hardware.v_dclink)
    assert sc.grid.v2_offset == pytest.approx(env.max_voltage_diff, rel=1e-12)
    res = resolve_references([ev.target for ev in sc.events], sc)
    assert res[0].q == pytest.approx(0.0, abs=1e-6)
    lim = sc.hardware.v_dclink / math.sqrt(2)
    assert all(abs(r.series_voltage) <= lim * (1 + 1e-12) for r in res)


def test_scenario3_offset_at_angle_limit():
    sc = load_config("table1-scenario3")
    _, env = operating_area(sc.grid.v1, sc.grid.v1, sc.hardware.v_dclink)
    assert sc.grid.angle_offset == pytest.approx(env.max_angle_diff, rel=1e-12)


def test_scenario1_current_at_limit():
    sc = load_config("table1-scenario1")
    res = resolve_references([sc.events[0].target], sc)[0]
    assert res.i_rms == pytest.approx(95.0)
    assert abs(res.series_voltage) == pytest.approx(50 / math.sqrt(2), rel=2e-3)


def test_infeasible_target():
    with pytest.raises(EnvelopeViolationError) as exc:
        resolve_target(Target(i_rms=200.0), V1, V1, Z, 50.0)
    assert exc.value.constraints


@given(st.floats(-30e3, 30e3), st.floats(-30e3, 30e3), st.floats(-5.0, 5.0), st.floats(-0.05, 0.05))
def test_resolve_round_trip(p, q, dv, dth):
    v2 = Phasor(V1.magnitude + dv, dth)
    zx = complex(0.0, 0.16)
    try:
        res = resolve_target(Target(p=p, q=q), V1, v2, zx, 1e4)
    except EnvelopeViolationError:
        return
    # forward through the per-phase power equation, scaled to three phases
    pf, qf = injected_power(V1, v2, res.command, zx.imag)
    assert 3 * pf == pytest.approx(p, abs=1e-9 * 3e4)
    assert 3 * qf == pytest.approx(q, abs=1e-9 * 3e4)
    assert feeder2_power(v2, res.current) == pytest.approx((p, q), abs=1e-9 * 3e4)


# ---------------------------------------------------------------------------
# envelope gate and gains

def out_of_envelope(mode):
    return load_config("table1-scenario1", ["grid.v2_offset=40", f'on_violation="{mode}"'])


def test_envelope_gate_error():
    with pytest.raises(EnvelopeViolationError, match="voltage difference"):
        check_envelope(out_of_envelope("error"))


def test_envelope_gate_bypass():
    sc = check_envelope(out_of_envelope("bypass"))
    assert all(ev.action == "bypass" for ev in sc.events)


def test_table1_gains_resolved():
    sc = load_config("table1-scenario1")
    g = resolve_gains(sc)
    assert (g.cm.kp, g.cm.ki) == pytest.approx((10.0, 261.0))
    assert (g.dm.kp, g.dm.ki) == pytest.approx((1.16, 1160.0))
    assert g.voltage.kp == pytest.approx(0.1 * 1.16 / (2 * 100e-6) * 2.2e-3)


def test_unity_ratio_voltage_gain():
    sc = load_config("table1-scenario1", ["gains.voltage_crossover_ratio=1.0"])
    assert resolve_gains(sc).voltage.kp == pytest.approx(12.76, abs=0.01)


def test_echoed_gains_identical():
    sc = load_config("table2-active")
    g = resolve_gains(sc)
    echoed = config_from_dict(echo_gains(sc, g).to_dict())
    assert resolve_gains(echoed) == g
    assert all(getattr(echoed.gains, n) is not None for n in GainConfig.LOOPS)
