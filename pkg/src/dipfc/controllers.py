"""Sampled controllers for the AFE, the interconnecting H-bridges and the series modules.

All three stages are three-phase; rotating-frame quantities come from the
amplitude-invariant Park transform of the three per-phase signals. Output
commands are rotated back with the angle at which they will be applied,
which the caller passes in as ``theta_apply``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .control_design import HardwareParams, PiGains
from .frames import DqVector, abc_to_dq, dq_to_abc


@dataclass(frozen=True)
class PiState:
    integrator: float = 0.0
    last_output: float = 0.0
    saturated: bool = False
    last_error: float | None = None


def pi_step(state: PiState, error: float, gains: PiGains, dt: float,
            limit: float | None = None, freeze: bool = False) -> tuple[float, PiState]:
    """Bilinear PI ``K_P (1 + 1/(tau_i s))`` with clamping and conditional integration.

    The integrator accumulates the trapezoidal area between the previous and
    the current error; the first call has no interval behind it. While the
    output is clamped, increments that push further into the limit are dropped.
    """
    if not dt > 0.0:
        raise ValueError("dt must be > 0")
    cap = gains.output_limit
    if limit is None:
        lo, hi = -cap, cap
    elif isinstance(limit, tuple):
        lo, hi = max(limit[0], -cap), min(limit[1], cap)
    else:
        lo, hi = -min(limit, cap), min(limit, cap)
    inc = 0.0
    if state.last_error is not None and not freeze:
        inc = gains.ki * dt * 0.5 * (error + state.last_error)
    integ = state.integrator + inc
    raw = gains.kp * error + integ
    saturated = raw > hi or raw < lo
    if (raw > hi and inc > 0.0) or (raw < lo and inc < 0.0):
        integ = state.integrator
        raw = gains.kp * error + integ
    out = min(max(raw, lo), hi)
    return out, PiState(integ, out, saturated, error)


def preload(state: PiState, output: float, gains: PiGains, error: float = 0.0) -> PiState:
    """Set the integrator so that the next output equals ``output`` (bumpless transfer)."""
    return replace(state, integrator=output - gains.kp * error, last_error=None)


def _limit_vector(d: float, q: float, limit: float) -> tuple[float, float, bool]:
    mag = math.hypot(d, q)
    if mag > limit > 0.0:
        s = limit / mag
        return d * s, q * s, True
    if limit <= 0.0:
        return 0.0, 0.0, mag > 0.0
    return d, q, False


@dataclass(frozen=True)
class ControllerOutputs:
    u_d: float
    u_q: float
    decoupling_d: float = 0.0
    decoupling_q: float = 0.0
    saturated: bool = False
    u_abc: tuple = (0.0, 0.0, 0.0)


class _DqCurrentLoop:
    """Pair of PI regulators for a dq current with cross-coupling compensation."""

    def __init__(self, gains: PiGains):
        self.gains = gains
        self.d = PiState()
        self.q = PiState()

    def reset(self):
        self.d = PiState()
        self.q = PiState()

    def run(self, err: DqVector, base: DqVector, dt: float, limit: float) -> tuple[DqVector, bool]:
        """``base + PI(err)`` limited to ``limit`` in magnitude."""
        pd, sd = pi_step(self.d, err.d, self.gains, dt)
        pq, sq = pi_step(self.q, err.q, self.gains, dt)
        ud, uq = base.d + pd, base.q + pq
        ud_l, uq_l, sat = _limit_vector(ud, uq, limit)
        if sat:
            pd, sd = pi_step(self.d, err.d, self.gains, dt, freeze=True)
            pq, sq = pi_step(self.q, err.q, self.gains, dt, freeze=True)
            ud_l, uq_l, _ = _limit_vector(base.d + pd, base.q + pq, limit)
        self.d = replace(sd, saturated=sat)
        self.q = replace(sq, saturated=sat)
        return DqVector(ud_l, uq_l), sat


class AfeController:
    """Voltage-oriented control: dc-bus PI outside, dq current PIs inside.

    Currents are positive from the grid into the converter.
    """

    def __init__(self, current_gains: PiGains, voltage_gains: PiGains, hw: HardwareParams,
                 current_limit: float = 100.0):
        self.hw = hw
        self.loop = _DqCurrentLoop(current_gains)
        self.vgains = voltage_gains.with_limit(min(voltage_gains.output_limit, current_limit))
        self.v = PiState()

    def step(self, i_abc, v_cap_abc, v_bus: float, theta: float, omega: float, dt: float,
             v_bus_ref: float, q_ref: float = 0.0, p_feedforward: float = 0.0,
             theta_apply: float | None = None) -> ControllerOutputs:
        i = abc_to_dq(*i_abc, theta)
        vc = abc_to_dq(*v_cap_abc, theta)
        vd = vc.d if vc.d > 1.0 else 1.0
        id_ff = p_feedforward / (1.5 * vd)
        id_pi, self.v = pi_step(self.v, v_bus_ref - v_bus, self.vgains, dt)
        id_ref = id_pi + id_ff
        iq_ref = -q_ref / (1.5 * vd)
        wl = omega * self.hw.l_f
        # U = V_C - PI(err) +/- w L_f I; the PI acts with a negative sign
        dec = DqVector(wl * i.q, -wl * i.d)
        err = DqVector(-(id_ref - i.d), -(iq_ref - i.q))
        u, sat = self.loop.run(err, vc + dec, dt, 0.5 * v_bus)
        th = theta if theta_apply is None else theta_apply
        return ControllerOutputs(u.d, u.q, dec.d, dec.q, sat, tuple(dq_to_abc(u, th)))

    @staticmethod
    def feedforward_only(i: DqVector, v_cap: DqVector, omega: float, l_f: float) -> DqVector:
        return DqVector(v_cap.d + omega * l_f * i.q, v_cap.q - omega * l_f * i.d)


@dataclass(frozen=True)
class HBridgeOutputs:
    u1: tuple
    u2: tuple
    u_cm: tuple
    u_dm: tuple
    i_dm_ref: tuple
    cm_dq: DqVector
    saturated: bool


class HBridgeController:
    """Common-mode suppression with priority, then dc-link regulation through the DM current."""

    def __init__(self, cm_gains: PiGains, dm_gains: PiGains, v_gains: PiGains, hw: HardwareParams,
                 i_dm_limit: float = 200.0, power_feedforward: bool = True):
        self.hw = hw
        self.cm = _DqCurrentLoop(cm_gains)
        self.dm_gains = dm_gains
        self.v_gains = v_gains.with_limit(min(v_gains.output_limit, i_dm_limit))
        self.i_dm_limit = i_dm_limit
        self.power_feedforward = power_feedforward
        self.dm = [PiState() for _ in range(3)]
        self.v = [PiState() for _ in range(3)]

    def reset(self):
        self.cm.reset()
        self.dm = [PiState() for _ in range(3)]
        self.v = [PiState() for _ in range(3)]

    def step(self, i_cm_abc, i_dm_abc, v_c_abc, v_cm_abc, v_dclink_ref, theta: float, omega: float,
             dt: float, v_bus: float, p_series_abc=(0.0, 0.0, 0.0), i_cm_ref: DqVector = DqVector(),
             theta_apply: float | None = None) -> HBridgeOutputs:
        th = theta if theta_apply is None else theta_apply
        half_bus = 0.5 * v_bus
        lcm = self.hw.l_cm_loop
        icm = abc_to_dq(*i_cm_abc, theta)
        vcm = abc_to_dq(*v_cm_abc, theta)
        dec = DqVector(-omega * lcm * icm.q, omega * lcm * icm.d)
        ucm_dq, sat = self.cm.run(i_cm_ref - icm, vcm + dec, dt, half_bus)
        ucm = dq_to_abc(ucm_dq, th)

        refs = np.broadcast_to(np.asarray(v_dclink_ref, dtype=float), (3,))
        u1, u2, udm_out, idm_refs = [], [], [], []
        for k in range(3):
            vc = v_c_abc[k]
            ff = 0.0
            if self.power_feedforward and vc > 1.0:
                ff = p_series_abc[k] / vc
            pv, self.v[k] = pi_step(self.v[k], refs[k] - vc, self.v_gains, dt)
            idm_ref = min(max(pv + ff, -self.i_dm_limit), self.i_dm_limit)
            headroom = 2.0 * max(half_bus - abs(ucm[k]), 0.0)
            pd, self.dm[k] = pi_step(self.dm[k], idm_ref - i_dm_abc[k], self.dm_gains, dt,
                                     limit=(-headroom - vc, headroom - vc))
            udm = vc + pd
            sat = sat or self.dm[k].saturated
            u1.append(ucm[k] + 0.5 * udm)
            u2.append(ucm[k] - 0.5 * udm)
            udm_out.append(udm)
            idm_refs.append(idm_ref)
        return HBridgeOutputs(tuple(u1), tuple(u2), tuple(ucm), tuple(udm_out), tuple(idm_refs),
                              ucm_dq, sat)


class SeriesModuleController:
    """dq line-current regulator of the three series-injection modules."""

    def __init__(self, gains: PiGains, l_line: float, v_limit: float, saturation_ticks: int = 400):
        self.loop = _DqCurrentLoop(gains)
        self.l_line = l_line
        self.v_limit = v_limit
        self.saturation_ticks = saturation_ticks
        self.sat_count = 0
        self.envelope_violation = False

    def reset(self):
        self.loop.reset()
        self.sat_count = 0

    def feedforward(self, i: DqVector, v1: DqVector, v2: DqVector, omega: float) -> DqVector:
        wl = omega * self.l_line
        return DqVector(v2.d - v1.d - wl * i.q, v2.q - v1.q + wl * i.d)

    def preload(self, i: DqVector, v1: DqVector, v2: DqVector, omega: float,
                output: DqVector = DqVector()):
        """Bumpless start from ``output`` with the reference equal to the measurement."""
        ff = self.feedforward(i, v1, v2, omega)
        self.loop.d = preload(self.loop.d, output.d - ff.d, self.loop.gains)
        self.loop.q = preload(self.loop.q, output.q - ff.q, self.loop.gains)

    def step(self, i_line_abc, i_ref: DqVector, v1_abc, v2_abc, theta: float, omega: float,
             dt: float, v_dclink_min: float | None = None,
             theta_apply: float | None = None) -> ControllerOutputs:
        i = abc_to_dq(*i_line_abc, theta)
        v1 = abc_to_dq(*v1_abc, theta)
        v2 = abc_to_dq(*v2_abc, theta)
        ff = self.feedforward(i, v1, v2, omega)
        lim = self.v_limit if v_dclink_min is None else min(self.v_limit, v_dclink_min)
        u, sat = self.loop.run(i_ref - i, ff, dt, lim)
        self.sat_count = self.sat_count + 1 if sat else 0
        if self.sat_count >= self.saturation_ticks:
            self.envelope_violation = True
        th = theta if theta_apply is None else theta_apply
        return ControllerOutputs(u.d, u.q, ff.d - (v2.d - v1.d), ff.q - (v2.q - v1.q), sat,
                                 tuple(dq_to_abc(u, th)))


def series_power_abc(v: DqVector, i: DqVector, theta: float) -> np.ndarray:
    """Instantaneous per-phase power ``v_k i_k`` of two dq vectors evaluated at angle ``theta``."""
    va = np.asarray(dq_to_abc(v, theta))
    ia = np.asarray(dq_to_abc(i, theta))
    return va * ia
