import math

import numpy as np
import pytest

from dipfc.control_design import (HardwareParams, LoopSpec, REFERENCE_GAINS, PiGains, eval_ol_cm, eval_ol_dm,
                                  measure_margins, tune_afe, tune_cm, tune_dm, tune_first_order, tune_voltage)
from dipfc.controllers import (AfeController, HBridgeController, PiState, SeriesModuleController, pi_step,
                               preload, series_power_abc)
from dipfc.frames import DqVector, abc_to_dq, dq_to_abc
from dipfc.probes import (NotSettledError, loop_model, margins_from_points, measure_loop_gain, simulate,
                          step_metrics, step_response_probe)

HW = HardwareParams()
W = 2 * math.pi * 50.0
TS = 1e-4
S45 = LoopSpec.degrees(45.0)


def test_pi_zero():
    out, st = pi_step(PiState(), 0.0, PiGains(2.0, 0.01), TS)
    assert out == 0.0 and st.integrator == 0.0


def test_pi_constant_error_ramp():
    g = PiGains(2.5, 3e-3)
    e = 0.7
    st = PiState()
    for k in range(50):
        out, st = pi_step(st, e, g, TS)
        assert out == pytest.approx(g.kp * e * (1.0 + k * TS / g.tau_i), rel=1e-12)


def test_pi_bad_dt():
    with pytest.raises(ValueError):
        pi_step(PiState(), 1.0, PiGains(1.0, 1.0), 0.0)


def test_pi_anti_windup_holds_integrator():
    g = PiGains(1.0, 1e-3, output_limit=2.0)
    out, st = pi_step(PiState(), 10.0, g, TS)
    held = st.integrator
    for _ in range(100):
        out, st = pi_step(st, 10.0, g, TS)
        assert out == 2.0 and st.saturated
        assert st.integrator == held


def test_pi_asymmetric_limit():
    out, _ = pi_step(PiState(), 10.0, PiGains(1.0, 1.0), TS, limit=(-1.0, 3.0))
    assert out == 3.0


def test_preload_bumpless():
    g = PiGains(2.0, 0.01)
    st = preload(PiState(), 5.0, g)
    out, _ = pi_step(st, 0.0, g, TS)
    assert out == pytest.approx(5.0)


def balanced(dq, theta):
    return tuple(dq_to_abc(dq, theta))


def test_afe_zero_error_passthrough():
    g = tune_afe(HW, LoopSpec.degrees(65.0))
    ctl = AfeController(g, PiGains(0.5, 0.1), HW)
    th = 0.3
    vc = DqVector(325.0, 0.0)
    out = ctl.step(balanced(DqVector(), th), balanced(vc, th), 800.0, th, W, TS, v_bus_ref=800.0)
    assert (out.u_d, out.u_q) == pytest.approx((325.0, 0.0), abs=1e-9)


def test_afe_decoupling_term():
    ff = AfeController.feedforward_only(DqVector(0.0, 1.0), DqVector(0.0, 0.0), W, HW.l_f)
    assert ff.d == pytest.approx(W * HW.l_f)
    assert ff.q == 0.0


def test_hbridge_zero_error_tracks_grid():
    ctl = HBridgeController(PiGains(10.0, 0.04), PiGains(1.0, 1e-3), PiGains(1.0, 0.02), HW,
                            power_feedforward=False)
    th = 0.5
    vcm = balanced(DqVector(320.0, -5.0), th)
    vc = (50.0, 50.0, 50.0)
    out = ctl.step((0, 0, 0), (0, 0, 0), vc, vcm, 50.0, th, W, TS, 800.0)
    assert np.allclose(out.u1, np.array(vcm) + 25.0, atol=1e-9)
    assert np.allclose(out.u2, np.array(vcm) - 25.0, atol=1e-9)


def test_hbridge_charges_low_dclink():
    ctl = HBridgeController(PiGains(10.0, 0.04), PiGains(1.0, 1e-3), PiGains(1.0, 0.02), HW)
    out = ctl.step((0, 0, 0), (0, 0, 0), (40.0, 40.0, 40.0), (0, 0, 0), 50.0, 0.0, W, TS, 800.0)
    assert all(r > 0 for r in out.i_dm_ref)
    assert all(u > 40.0 for u in out.u_dm)


def test_hbridge_leg_limit():
    ctl = HBridgeController(PiGains(1e4, 1e-3), PiGains(1e3, 1e-3), PiGains(1e3, 1e-3), HW)
    out = ctl.step((100, -50, -50), (50, 50, 50), (50.0, 50.0, 50.0), (0, 0, 0), 50.0, 0.0, W, TS, 800.0)
    assert out.saturated
    assert max(abs(v) for v in out.u1 + out.u2) <= 400.0 + 1e-9


def test_series_zero_error_is_feedforward():
    l_line = 0.16 / W
    ctl = SeriesModuleController(PiGains(1.0, 0.01), l_line, 35.36)
    th = 1.1
    i = DqVector(50.0, 10.0)
    v1, v2 = DqVector(325.0, 0.0), DqVector(320.0, -3.0)
    out = ctl.step(balanced(i, th), i, balanced(v1, th), balanced(v2, th), th, W, TS)
    ff = ctl.feedforward(i, v1, v2, W)
    assert (out.u_d, out.u_q) == pytest.approx((ff.d, ff.q), abs=1e-9)


def test_series_sustained_saturation_flags_violation():
    ctl = SeriesModuleController(PiGains(1.0, 0.01), 1e-3, 10.0, saturation_ticks=5)
    for _ in range(6):
        ctl.step((0, 0, 0), DqVector(1e4, 0.0), (0, 0, 0), (0, 0, 0), 0.0, W, TS)
    assert ctl.envelope_violation


def test_series_power_abc():
    p = series_power_abc(DqVector(10.0, 0.0), DqVector(2.0, 0.0), 0.0)
    assert p.sum() == pytest.approx(1.5 * 10.0 * 2.0)


def test_decoupling_exactness():
    """dq line plant with exact parameters and no delay: a d step leaves q untouched."""
    r, l_line = 0.328, 0.16 / W
    dt = 1e-6
    g = tune_first_order(l_line, r, LoopSpec(math.radians(45.0), dt))
    ctl = SeriesModuleController(g, l_line, 1e6)
    v = DqVector(325.0, 0.0)
    i = DqVector()
    q_peak = 0.0
    for k in range(5000):
        th = W * k * dt
        out = ctl.step(balanced(i, th), DqVector(50.0, 0.0), balanced(v, th), balanced(v, th), th, W, dt)
        # L di/dt = u - R i - j w L i in the rotating frame (v1 = v2 cancel)
        did = (out.u_d - r * i.d + W * l_line * i.q) / l_line
        diq = (out.u_q - r * i.q - W * l_line * i.d) / l_line
        i = DqVector(i.d + dt * did, i.q + dt * diq)
        q_peak = max(q_peak, abs(i.q))
    assert i.d == pytest.approx(50.0, rel=1e-3)
    assert q_peak < 1e-6 * 50.0


# ---------------------------------------------------------------------------
# sampled-loop probes

LOOP_GAINS = {
    "cm": lambda: tune_cm(HW, S45),
    "dm": lambda: tune_dm(HW, S45),
    "afe_current": lambda: tune_afe(HW, LoopSpec.degrees(65.0)),
}


@pytest.mark.parametrize("loop", ["cm", "dm", "afe_current"])
def test_zero_steady_state_error(loop):
    m = loop_model(loop, LOOP_GAINS[loop](), HW)
    _, y, _, _ = simulate(m, lambda k: 3.0, lambda k: 0.0, 4000, TS)
    assert y[-1] == pytest.approx(3.0, rel=1e-6)


def test_zero_steady_state_error_voltage():
    gdm = tune_dm(HW, S45)
    m = loop_model("voltage", tune_voltage(HW, gdm), HW, inner=gdm)
    _, y, _, _ = simulate(m, lambda k: 50.0, lambda k: 0.0, 20000, TS)
    assert y[-1] == pytest.approx(50.0, rel=1e-6)


def test_cm_overshoot_band():
    m = step_response_probe("cm", 1.0, tune_cm(HW, S45), HW)
    assert 20.0 <= m.overshoot <= 30.0


def test_voltage_overshoot_small():
    gdm = tune_dm(HW, S45)
    m = step_response_probe("voltage", 5.0, tune_voltage(HW, gdm), HW, inner=gdm)
    assert m.overshoot < 10.0


def test_zero_magnitude_probe():
    m = step_response_probe("cm", 0.0, tune_cm(HW, S45), HW)
    assert (m.rise_time, m.overshoot, m.settling_time, m.final_value) == (0.0, 0.0, 0.0, 0.0)


def test_series_current_step_settles_20ms():
    l_line = 0.16 / W + 50e-6
    g = tune_first_order(l_line, 0.328, S45)
    m = step_response_probe("series_current", 95.0, g, HW, l_line=l_line, r_line=0.328)
    assert m.settling_time < 0.02
    assert m.final_value == pytest.approx(95.0, rel=1e-3)


def test_probe_unknown_loop():
    with pytest.raises(ValueError):
        loop_model("nope", PiGains(1, 1), HW)


def test_step_metrics_not_settled():
    t = np.linspace(0, 1, 100)
    with pytest.raises(NotSettledError):
        step_metrics(t, 0.5 * t, 1.0)


def test_anti_windup_recovery():
    """A clamped step recovers with no more overshoot than the unclamped one plus 5 points."""
    g = tune_cm(HW, S45)
    free = step_response_probe("cm", 1.0, g, HW)
    clamped = step_response_probe("cm", 1.0, g.with_limit(2.0), HW)
    assert clamped.overshoot <= free.overshoot + 5.0


@pytest.mark.parametrize("loop,gains", [("cm", tune_cm(HW, S45)), ("dm", tune_dm(HW, S45)),
                                        ("cm", PiGains.from_kp_ki(*REFERENCE_GAINS["cm"])),
                                        ("dm", PiGains.from_kp_ki(*REFERENCE_GAINS["dm"]))])
def test_delay_fidelity(loop, gains):
    """Injected-sine loop gain of the sampled loop against the continuous e^{-1.5 s Ts} design model."""
    model = loop_model(loop, gains, HW)
    pts = measure_loop_gain(model, range(8, 20))
    wc, pm = margins_from_points(pts)
    fn = eval_ol_cm if loop == "cm" else eval_ol_dm
    fr = measure_margins(lambda w: fn(gains, HW, S45, w))
    assert math.degrees(pm) == pytest.approx(fr.phase_margin_deg, abs=3.0)
    assert wc == pytest.approx(fr.crossover, rel=0.1)
