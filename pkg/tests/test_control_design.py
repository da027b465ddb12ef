import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dipfc.control_design import (CrossoverNotFoundError, HardwareParams, InnerLoopUnstableError, LoopSpec,
                                  REFERENCE_GAINS, PiGains, StabilityCriterionError, TuningError, dm_crossover,
                                  eval_ol_cm, eval_ol_dm, eval_ol_voltage, measure_margins, tune_afe,
                                  tune_cm, tune_dm, tune_voltage, unstable_closed_loop_poles)

HW = HardwareParams()


def spec(pm_deg, ts=1e-4):
    return LoopSpec.degrees(pm_deg, ts)


def test_default_delay():
    assert spec(45).delay == pytest.approx(150e-6)


@pytest.mark.parametrize("pm", [0.0, math.pi / 2, -0.1])
def test_loopspec_rejects_margin(pm):
    with pytest.raises(ValueError):
        LoopSpec(pm)


def test_pigains_invariants():
    with pytest.raises(ValueError):
        PiGains(0.0, 1.0)
    with pytest.raises(ValueError):
        PiGains(1.0, 0.0)
    assert PiGains.from_kp_ki(2.0, 8.0).tau_i == pytest.approx(0.25)


def test_afe_boundary_a_equals_two():
    g = tune_afe(HW, LoopSpec(math.pi / 2 - 0.5))
    assert g.kp == pytest.approx(1e-3 / (1.5 * 2.0 * 1e-4))
    assert g.kp == pytest.approx(3.333, abs=5e-4)
    assert g.tau_i == pytest.approx(0.01)


def test_afe_stability_criterion():
    with pytest.raises(StabilityCriterionError):
        tune_afe(HW, spec(45))


def test_afe_margin_near_quarter_turn():
    # a grows without bound as the margin approaches pi/2; the gain collapses rather than overflowing
    g = tune_afe(HW, LoopSpec(math.pi / 2 - 1e-9))
    assert g.kp < 1e-5
    with pytest.raises(ValueError):
        tune_afe(HW, LoopSpec(math.pi / 2))


def test_afe_zero_resistance():
    with pytest.raises(TuningError):
        tune_afe(HardwareParams(r_f=0.0), LoopSpec(math.radians(65)))


def test_cm_values():
    g = tune_cm(HW, spec(45))
    assert spec(45).crossover == pytest.approx(5235.99, abs=0.01)
    assert g.kp == pytest.approx(10.73, abs=0.005)
    assert g.tau_i == pytest.approx(0.041)
    assert g.ki == pytest.approx(261.7, abs=0.15)


def test_cm_zero_resistance():
    with pytest.raises(TuningError):
        tune_cm(HardwareParams(r=0.0), spec(45))


def test_dm_values():
    g = tune_dm(HW, spec(45))
    assert g.kp == pytest.approx(1.047, abs=5e-4)
    assert g.tau_i == pytest.approx(1e-3)
    assert g.ki / g.kp == pytest.approx(1000.0, rel=1e-12)


def test_dm_reference_margin():
    g = tune_dm(HW, spec(40.2))
    assert g.kp == pytest.approx(REFERENCE_GAINS["dm"][0], rel=0.01)
    assert g.ki == pytest.approx(REFERENCE_GAINS["dm"][1], rel=0.01)


def test_voltage_values():
    inner = PiGains(5800.0 * 2.0 * HW.l_dm, 1e-3)
    assert dm_crossover(inner, HW) == pytest.approx(5800.0)
    g = tune_voltage(HW, inner)
    assert g.kp == pytest.approx(1.276, abs=1e-3)
    assert g.tau_i == pytest.approx(10.0 / 580.0)
    # without the decade separation the reference gain appears
    assert tune_voltage(HW, inner, crossover_ratio=1.0).kp == pytest.approx(12.76, abs=0.01)


def test_voltage_scales_with_capacitance():
    inner = tune_dm(HW, spec(45))
    a = tune_voltage(HW, inner).kp
    b = tune_voltage(HardwareParams(c=2 * HW.c), inner).kp
    assert b == pytest.approx(2 * a)


def test_cm_high_frequency_rolloff():
    g = tune_cm(HW, spec(45))
    assert abs(eval_ol_cm(g, HW, spec(45), 1e9)) < 1e-4


def test_dm_integral_action():
    g = tune_dm(HW, spec(45))
    assert abs(eval_ol_dm(g, HW, spec(45), 1e-6)) > 1e6


@pytest.mark.parametrize("pm", [35.0, 40.0, 45.0, 50.0, 60.0])
def test_margin_closure_cm_dm(pm):
    s = spec(pm)
    gcm, gdm = tune_cm(HW, s), tune_dm(HW, s)
    for fn in (lambda w: eval_ol_cm(gcm, HW, s, w), lambda w: eval_ol_dm(gdm, HW, s, w)):
        fr = measure_margins(fn)
        assert fr.phase_margin_deg == pytest.approx(pm, abs=1.0)
        assert abs(fr.gain_at_crossover) == pytest.approx(1.0, abs=0.01)
        assert fr.crossover == pytest.approx(s.crossover, rel=0.01)


def test_margin_closure_voltage():
    s = spec(45)
    gdm = tune_dm(HW, s)
    gv = tune_voltage(HW, gdm)
    fr = measure_margins(lambda w: eval_ol_voltage(gv, gdm, HW, s, w))
    assert abs(fr.gain_at_crossover) == pytest.approx(1.0, abs=0.05)
    assert fr.crossover == pytest.approx(0.1 * dm_crossover(gdm, HW), rel=0.1)


def test_voltage_cascade_limit():
    s = spec(45)
    gdm = tune_dm(HW, s)
    gv = PiGains(1.0, 1e9)
    w = 10.0
    g = eval_ol_voltage(gv, gdm, HW, s, w)
    assert g == pytest.approx(1.0 / (1j * w * HW.c), rel=1e-2)


def test_voltage_rejects_unstable_inner():
    s = spec(45)
    gdm = PiGains(50.0, 1e-3)
    assert unstable_closed_loop_poles(lambda w: eval_ol_dm(gdm, HW, s, w), 1) > 0
    with pytest.raises(InnerLoopUnstableError):
        eval_ol_voltage(PiGains(1.0, 0.01), gdm, HW, s, 100.0)


def test_pure_integrator_margins():
    fr = measure_margins(lambda w: 1.0 / (1j * np.asarray(w)), sweep=(0.1, 10.0, 400))
    assert fr.crossover == pytest.approx(1.0, rel=1e-6)
    assert fr.phase_margin_deg == pytest.approx(90.0, abs=1e-6)


def test_no_crossover():
    with pytest.raises(CrossoverNotFoundError):
        measure_margins(lambda w: 0.5 + 0 * np.asarray(w))
    with pytest.raises(ValueError):
        measure_margins(lambda w: 1 / (1j * w), sweep=(0.1, 10.0, 50))


@given(st.floats(5.0, 80.0), st.floats(1.0, 10.0))
def test_gain_monotone_in_margin(pm, extra):
    lo, hi = spec(pm), spec(min(pm + extra, 89.0))
    assert tune_cm(HW, lo).kp > tune_cm(HW, hi).kp
    assert tune_dm(HW, lo).kp > tune_dm(HW, hi).kp


@given(st.floats(5.0, 85.0), st.floats(1e-5, 1e-3))
def test_delay_doubling_halves_crossover(pm, td):
    a = LoopSpec(math.radians(pm), 1e-4, td)
    b = LoopSpec(math.radians(pm), 1e-4, 2 * td)
    assert b.crossover == pytest.approx(0.5 * a.crossover, rel=1e-12)
