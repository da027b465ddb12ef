import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dipfc.frames import (DqVector, SogiState, SyncState, abc_to_dq, dq_to_abc, single_phase_to_dq,
                          sync_step)

TWO_PI = 2.0 * math.pi
W = TWO_PI * 50.0


def balanced(amp, phase, theta):
    return tuple(amp * math.cos(theta + phase - k * TWO_PI / 3.0) for k in range(3))


def park_matrix_oracle(a, b, c, theta):
    """Brute-force amplitude-invariant Park matrix product."""
    m = (2.0 / 3.0) * np.array([
        [math.cos(theta), math.cos(theta - TWO_PI / 3), math.cos(theta + TWO_PI / 3)],
        [-math.sin(theta), -math.sin(theta - TWO_PI / 3), -math.sin(theta + TWO_PI / 3)],
    ])
    return m @ np.array([a, b, c])


def test_zero_input():
    dq = abc_to_dq(0.0, 0.0, 0.0, 1.234)
    assert (dq.d, dq.q) == (0.0, 0.0)


def test_aligned_set_maps_to_d():
    dq = abc_to_dq(*balanced(1.0, 0.0, 0.7), 0.7)
    assert dq.d == pytest.approx(1.0, abs=1e-12)
    assert dq.q == pytest.approx(0.0, abs=1e-12)


def test_quadrature_set_maps_to_q():
    theta = 0.3
    x = balanced(1.0, math.pi / 2, theta)
    dq = abc_to_dq(*x, theta)
    d, q = park_matrix_oracle(*x, theta)
    assert (dq.d, dq.q) == pytest.approx((d, q), abs=1e-12)
    assert (dq.d, dq.q) == pytest.approx((0.0, 1.0), abs=1e-12)


@given(st.floats(0.0, 1e3), st.floats(-math.pi, math.pi), st.floats(-20.0, 20.0))
def test_round_trip(amp, phase, theta):
    x = balanced(amp, phase, theta)
    back = dq_to_abc(abc_to_dq(*x, theta), theta)
    assert np.allclose(back, x, atol=1e-12 * max(1.0, amp))


@given(st.floats(0.0, 1e3), st.floats(-math.pi, math.pi), st.floats(-20.0, 20.0), st.floats(-math.pi, math.pi))
def test_rotation_equivariance(amp, phase, theta, delta):
    x = balanced(amp, phase, 0.0)
    a = abc_to_dq(*x, theta + delta)
    b = abc_to_dq(*x, theta).rotate(-delta)
    assert (a.d, a.q) == pytest.approx((b.d, b.q), abs=1e-9 * max(1.0, amp))


@given(st.floats(0.0, 1e3), st.floats(-math.pi, math.pi), st.floats(-20.0, 20.0))
def test_magnitude_is_peak(amp, phase, theta):
    assert abc_to_dq(*balanced(amp, phase, theta), theta).magnitude == pytest.approx(amp, abs=1e-9 * max(1, amp))


def run_sogi(x_of_theta, cycles=3.0, dt=1e-4):
    osg = SogiState()
    n = int(round(cycles * 0.02 / dt))
    dq = DqVector()
    for k in range(n):
        theta_next = W * (k + 1) * dt
        dq, osg = single_phase_to_dq(x_of_theta(W * k * dt), SyncState(theta_next, W), osg, dt)
    return dq


def test_sogi_in_phase():
    dq = run_sogi(lambda th: 10.0 * math.cos(th))
    assert dq.d == pytest.approx(10.0, rel=0.02)
    assert abs(dq.q) < 0.2


def test_sogi_zero():
    dq = run_sogi(lambda th: 0.0)
    assert (dq.d, dq.q) == (0.0, 0.0)


def test_sogi_quarter_phase():
    a = 10.0
    dq = run_sogi(lambda th: a * math.cos(th + math.pi / 4))
    assert dq.d == pytest.approx(a / math.sqrt(2), rel=0.02)
    assert dq.q == pytest.approx(a / math.sqrt(2), rel=0.02)


def test_sogi_magnitude_within_one_percent():
    dq = run_sogi(lambda th: 5.0 * math.cos(th - 1.0), cycles=6.0, dt=2e-5)
    assert dq.magnitude == pytest.approx(5.0, rel=0.01)


def test_sync_aligned_advances_nominal():
    dt = 1e-4
    s0 = SyncState(0.4, W)
    s1 = sync_step(balanced(325.0, 0.0, 0.4), s0, dt)
    assert s1.theta == pytest.approx(0.4 + W * dt, abs=1e-12)
    assert s1.omega == pytest.approx(W, abs=1e-9)


def test_sync_rejects_bad_dt():
    with pytest.raises(ValueError):
        sync_step(DqVector(1.0, 0.0), SyncState(), 0.0)


def simulate_pll(f_of_t, phase0, t_end, dt=1e-4):
    sync = SyncState()
    ang = phase0
    for k in range(int(round(t_end / dt))):
        sync = sync_step(balanced(325.0, 0.0, ang), sync, dt)
        ang += TWO_PI * f_of_t(k * dt) * dt
    return sync, ang


def test_pll_locks_within_200ms():
    sync, ang = simulate_pll(lambda t: 50.0, 2.0, 0.2)
    assert abs(sync.omega - W) < 0.1
    err = math.remainder(ang - sync.theta, TWO_PI)
    assert abs(err) < 1e-3


def test_pll_frequency_step_relocks():
    f_new = 50.5
    sync, ang = simulate_pll(lambda t: 50.0 if t < 0.1 else f_new, 0.0, 0.6)
    assert sync.omega == pytest.approx(TWO_PI * f_new, abs=0.01)
    assert abs(math.remainder(ang - sync.theta, TWO_PI)) < 1e-4


def test_theta_wraps():
    assert 0.0 <= SyncState(100.0).theta < TWO_PI
