"""Averaged continuous-time models of the power stages.

Sign conventions
----------------
* line current ``i_line`` flows from feeder 1 to feeder 2;
* H-bridge leg currents flow from the legs into the floating dc-link nodes,
  with ``i_cm = i_1 + i_2`` and ``i_dm = (i_1 - i_2) / 2``;
* AFE currents flow from the grid into the converter (rectifier convention).

The numba kernels below are pure functions of (state, input, parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .control_design import HardwareParams

N_PHASE = 3
N_PER_PHASE = 7
# per-phase state offsets
I_LINE, V_DCLINK, I_CM, I_DM, I_AFE, V_CF, I_GRID = range(N_PER_PHASE)
V_BUS = N_PHASE * N_PER_PHASE
N_STATE = V_BUS + 1

# per-phase input offsets
U_SERIES, U_CM, U_DM, U_AFE, U_HB_ON = range(5)
N_U_PER_PHASE = 5
U_LOAD = N_PHASE * N_U_PER_PHASE
N_INPUT = U_LOAD + 1

PARAM_NAMES = (
    "r_line", "l_line", "c_dclink", "r_hb", "l_cm", "l_dm", "l_f", "r_f", "c_f",
    "r_d", "l_g", "r_g", "c_bus", "v1_peak", "theta1", "v2_peak", "theta2",
    "omega_g", "v_eps",
)
P = {name: i for i, name in enumerate(PARAM_NAMES)}


class UnderVoltageFault(RuntimeError):
    pass


@dataclass(frozen=True)
class PlantParams:
    r_line: float
    l_line: float
    hw: HardwareParams
    r_d: float = 2.0
    l_g: float = 0.2e-3
    r_g: float = 0.05
    v_eps: float = 1e-3

    def __post_init__(self):
        if not self.l_line > 0.0:
            raise ValueError("total line inductance must be > 0")
        if self.r_line < 0.0:
            raise ValueError("line resistance must be >= 0")
        if not self.l_g > 0.0:
            raise ValueError("grid-side inductance must be > 0")

    def to_array(self, v1_peak: float, theta1: float, v2_peak: float, theta2: float,
                 omega_g: float) -> np.ndarray:
        hw = self.hw
        values = dict(
            r_line=self.r_line, l_line=self.l_line, c_dclink=hw.c, r_hb=hw.r, l_cm=hw.l_cm,
            l_dm=hw.l_dm, l_f=hw.l_f, r_f=hw.r_f, c_f=hw.c_f, r_d=self.r_d, l_g=self.l_g,
            r_g=self.r_g, c_bus=hw.c_bus, v1_peak=v1_peak, theta1=theta1, v2_peak=v2_peak,
            theta2=theta2, omega_g=omega_g, v_eps=self.v_eps,
        )
        return np.array([values[n] for n in PARAM_NAMES], dtype=np.float64)


@njit(cache=True)
def series_kernel(i_line, v_dclink, v1, v2, v_series_cmd, i_dm, r_line, l_line, c_dclink, v_eps):
    """Line current and dc-link derivatives; returns (di, dv, applied series voltage).

    The applied voltage is limited to the instantaneous dc-link voltage and the
    module draws ``v_s i_line / v_dclink`` from its capacitor.
    """
    v_s = v_series_cmd
    if v_dclink > v_eps:
        if v_s > v_dclink:
            v_s = v_dclink
        elif v_s < -v_dclink:
            v_s = -v_dclink
        m = v_s / v_dclink
    else:
        v_s = 0.0
        m = 0.0
    di = (v1 + v_s - v2 - r_line * i_line) / l_line
    dv = (i_dm - m * i_line) / c_dclink
    if v_dclink <= 0.0 and dv < 0.0:
        dv = 0.0
    return di, dv, v_s


@njit(cache=True)
def hbridge_kernel(i_cm, i_dm, u_cm, u_dm, v_p, v_n, r, l_cm, l_dm):
    v_cm = 0.5 * (v_p + v_n)
    v_dm = v_p - v_n
    di_cm = (u_cm - 0.5 * r * i_cm - v_cm) / (l_cm + 0.5 * l_dm)
    di_dm = (u_dm - 2.0 * r * i_dm - v_dm) / (2.0 * l_dm)
    return di_cm, di_dm


@njit(cache=True)
def afe_phase_kernel(i_conv, v_cf, i_grid, v_grid, u_conv, l_f, r_f, c_f, r_d, l_g, r_g):
    """One AFE phase: converter inductor, damped filter capacitor, grid-side inductor."""
    v_node = v_cf + r_d * (i_grid - i_conv)
    di_conv = (v_node - u_conv - r_f * i_conv) / l_f
    dv_cf = (i_grid - i_conv) / c_f
    di_grid = (v_grid - v_node - r_g * i_grid) / l_g
    return di_conv, dv_cf, di_grid, v_node


@njit(cache=True)
def _clip(x, lim):
    if x > lim:
        return lim
    if x < -lim:
        return -lim
    return x


@njit(cache=True)
def grid_voltages(t, p):
    w = p[17]
    v1 = np.empty(3)
    v2 = np.empty(3)
    for k in range(3):
        sh = 2.0 * math.pi * k / 3.0
        v1[k] = p[13] * math.cos(w * t + p[14] - sh)
        v2[k] = p[15] * math.cos(w * t + p[16] - sh)
    return v1, v2


@njit(cache=True)
def composed_deriv(t, x, u, p, dx):
    """Derivative of the full three-phase plant (writes into ``dx``)."""
    v1, v2 = grid_voltages(t, p)
    v_bus = x[21]
    half_bus = 0.5 * v_bus if v_bus > 0.0 else 0.0
    p_bus = 0.0
    for k in range(3):
        b = 7 * k
        ub = 5 * k
        i_line = x[b]
        v_c = x[b + 1]
        i_cm = x[b + 2]
        i_dm = x[b + 3]

        di, dv, v_s = series_kernel(i_line, v_c, v1[k], v2[k], u[ub], i_dm,
                                    p[0], p[1], p[2], p[18])
        dx[b] = di
        dx[b + 1] = dv

        if u[ub + 4] > 0.5:
            u1 = _clip(u[ub + 1] + 0.5 * u[ub + 2], half_bus)
            u2 = _clip(u[ub + 1] - 0.5 * u[ub + 2], half_bus)
            u_cm = 0.5 * (u1 + u2)
            u_dm = u1 - u2
            v_cm = 0.5 * (v1[k] + v2[k])
            dcm, ddm = hbridge_kernel(i_cm, i_dm, u_cm, u_dm, v_cm + 0.5 * v_c, v_cm - 0.5 * v_c,
                                      p[3], p[4], p[5])
            dx[b + 2] = dcm
            dx[b + 3] = ddm
            p_bus -= u_cm * i_cm + u_dm * i_dm
        else:
            dx[b + 2] = 0.0
            dx[b + 3] = 0.0

        u_afe = _clip(u[ub + 3], half_bus)
        dif, dvcf, dig, _ = afe_phase_kernel(x[b + 4], x[b + 5], x[b + 6], v1[k], u_afe,
                                             p[6], p[7], p[8], p[9], p[10], p[11])
        dx[b + 4] = dif
        dx[b + 5] = dvcf
        dx[b + 6] = dig
        p_bus += u_afe * x[b + 4]
    p_bus -= u[15]
    vb = v_bus if v_bus > 1.0 else 1.0
    dx[21] = p_bus / (p[12] * vb)


@njit(cache=True)
def rk4_steps(x, u, p, t0, dt, n, dec, step0, rec_x, rec_t, rec_i):
    """Advance ``x`` in place by ``n`` RK4 steps of size ``dt``.

    Every global step index divisible by ``dec`` (before stepping) is
    recorded into ``rec_x``/``rec_t`` starting at row ``rec_i``; the next free
    row is returned.
    """
    ns = x.shape[0]
    k1 = np.empty(ns)
    k2 = np.empty(ns)
    k3 = np.empty(ns)
    k4 = np.empty(ns)
    tmp = np.empty(ns)
    for j in range(n):
        t = t0 + j * dt
        if dec > 0 and (step0 + j) % dec == 0 and rec_i < rec_x.shape[0]:
            rec_x[rec_i, :] = x
            rec_t[rec_i] = t
            rec_i += 1
        composed_deriv(t, x, u, p, k1)
        for i in range(ns):
            tmp[i] = x[i] + 0.5 * dt * k1[i]
        composed_deriv(t + 0.5 * dt, tmp, u, p, k2)
        for i in range(ns):
            tmp[i] = x[i] + 0.5 * dt * k2[i]
        composed_deriv(t + 0.5 * dt, tmp, u, p, k3)
        for i in range(ns):
            tmp[i] = x[i] + dt * k3[i]
        composed_deriv(t + dt, tmp, u, p, k4)
        for i in range(ns):
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for k in range(3):
            if x[7 * k + 1] < 0.0:
                x[7 * k + 1] = 0.0
    return rec_i


# ---------------------------------------------------------------------------
# Python-facing subsystem models


@dataclass(frozen=True)
class SeriesStageState:
    i_line: float = 0.0
    v_dclink: float = 0.0


@dataclass(frozen=True)
class SeriesParams:
    r_line: float
    l_line: float
    c_dclink: float
    v_eps: float = 1e-3


def series_stage_deriv(state: SeriesStageState, v1: float, v2: float, v_series_cmd: float,
                       params: SeriesParams, p_hbridge_in: float = 0.0,
                       active: bool = False) -> SeriesStageState:
    """Time derivative of the series stage.

    ``p_hbridge_in`` is the power the interconnecting H-bridge delivers into
    the dc-link. With ``active`` set, a collapsed dc-link raises
    :class:`UnderVoltageFault`.
    """
    if not params.l_line > 0.0:
        raise ValueError("total line inductance must be > 0")
    v = state.v_dclink
    if active and v <= params.v_eps and v_series_cmd != 0.0:
        raise UnderVoltageFault(f"dc-link at {v:.3g} V during active injection")
    i_dm = p_hbridge_in / v if v > params.v_eps else 0.0
    di, dv, _ = series_kernel(state.i_line, v, v1, v2, v_series_cmd, i_dm,
                              params.r_line, params.l_line, params.c_dclink, params.v_eps)
    return SeriesStageState(di, dv)


@dataclass(frozen=True)
class HBridgeState:
    i_cm: float = 0.0
    i_dm: float = 0.0

    @property
    def leg_currents(self) -> tuple[float, float]:
        return 0.5 * self.i_cm + self.i_dm, 0.5 * self.i_cm - self.i_dm

    @classmethod
    def from_legs(cls, i1: float, i2: float) -> "HBridgeState":
        return cls(i1 + i2, 0.5 * (i1 - i2))


def hbridge_deriv(state: HBridgeState, u_cm: float, u_dm: float, v_p: float, v_n: float,
                  hw: HardwareParams) -> HBridgeState:
    di_cm, di_dm = hbridge_kernel(state.i_cm, state.i_dm, u_cm, u_dm, v_p, v_n,
                                  hw.r, hw.l_cm, hw.l_dm)
    return HBridgeState(di_cm, di_dm)


def hbridge_leg_deriv(i1: float, i2: float, v_sw1: float, v_sw2: float, v_p: float, v_n: float,
                      hw: HardwareParams) -> tuple[float, float]:
    """Two-mesh model of the same H-bridge written per leg.

    Each leg has its own DM inductor and resistance; the CM choke windings are
    perfectly coupled with self inductance ``L_CM``.
    """
    m = np.array([[hw.l_cm + hw.l_dm, hw.l_cm], [hw.l_cm, hw.l_cm + hw.l_dm]])
    rhs = np.array([v_sw1 - v_p - hw.r * i1, v_sw2 - v_n - hw.r * i2])
    d1, d2 = np.linalg.solve(m, rhs)
    return float(d1), float(d2)


@dataclass(frozen=True)
class AfeState:
    i_conv: np.ndarray
    v_cap: np.ndarray
    i_grid: np.ndarray
    v_bus: float


@dataclass(frozen=True)
class AfeDerivative:
    state: AfeState
    saturated: bool
    p_ac_in: float


def afe_deriv(state: AfeState, v_grid, duty_cmd, load_power: float, hw: HardwareParams,
              r_d: float = 2.0, l_g: float = 0.2e-3, r_g: float = 0.05) -> AfeDerivative:
    """Three-phase AFE with a shared split dc bus.

    ``duty_cmd`` holds the averaged per-phase converter voltages; commands past
    half the bus voltage are clamped and flagged.
    """
    lim = 0.5 * state.v_bus
    cmd = np.asarray(duty_cmd, dtype=float)
    u = np.clip(cmd, -lim, lim)
    saturated = bool(np.any(np.abs(cmd) > lim))
    di = np.empty(3)
    dv = np.empty(3)
    dg = np.empty(3)
    for k in range(3):
        di[k], dv[k], dg[k], _ = afe_phase_kernel(
            state.i_conv[k], state.v_cap[k], state.i_grid[k], float(v_grid[k]), u[k],
            hw.l_f, hw.r_f, hw.c_f, r_d, l_g, r_g,
        )
    p_in = float(np.dot(u, state.i_conv))
    dvb = (p_in - load_power) / (hw.c_bus * max(state.v_bus, 1.0))
    return AfeDerivative(AfeState(di, dv, dg, dvb), saturated, p_in)


def stored_energy(x: np.ndarray, p: np.ndarray) -> float:
    pp = {n: p[i] for i, n in enumerate(PARAM_NAMES)}
    e = 0.5 * pp["c_bus"] * x[V_BUS] ** 2
    for k in range(N_PHASE):
        b = N_PER_PHASE * k
        e += 0.5 * pp["l_line"] * x[b + I_LINE] ** 2
        e += 0.5 * pp["c_dclink"] * x[b + V_DCLINK] ** 2
        e += 0.5 * (pp["l_cm"] + 0.5 * pp["l_dm"]) * x[b + I_CM] ** 2
        e += pp["l_dm"] * x[b + I_DM] ** 2
        e += 0.5 * pp["l_f"] * x[b + I_AFE] ** 2
        e += 0.5 * pp["c_f"] * x[b + V_CF] ** 2
        e += 0.5 * pp["l_g"] * x[b + I_GRID] ** 2
    return e


def power_balance(t: float, x: np.ndarray, u: np.ndarray, p: np.ndarray) -> tuple[float, float, float]:
    """(dE/dt, dissipation, net source power) of the composed plant.

    The first two sum to the third whenever no limiter is active.
    """
    dx = np.empty_like(x)
    composed_deriv(t, x, u, p, dx)
    pp = {n: p[i] for i, n in enumerate(PARAM_NAMES)}
    v1, v2 = grid_voltages(t, p)
    de = pp["c_bus"] * x[V_BUS] * dx[V_BUS]
    diss = 0.0
    src = -u[U_LOAD]
    for k in range(N_PHASE):
        b = N_PER_PHASE * k
        il, vc, icm, idm, iaf, vcf, ig = x[b:b + N_PER_PHASE]
        de += pp["l_line"] * il * dx[b + I_LINE] + pp["c_dclink"] * vc * dx[b + V_DCLINK]
        de += (pp["l_cm"] + 0.5 * pp["l_dm"]) * icm * dx[b + I_CM] + 2.0 * pp["l_dm"] * idm * dx[b + I_DM]
        de += pp["l_f"] * iaf * dx[b + I_AFE] + pp["c_f"] * vcf * dx[b + V_CF] + pp["l_g"] * ig * dx[b + I_GRID]
        diss += pp["r_line"] * il ** 2 + 0.5 * pp["r_hb"] * icm ** 2 + 2.0 * pp["r_hb"] * idm ** 2
        diss += pp["r_f"] * iaf ** 2 + pp["r_g"] * ig ** 2 + pp["r_d"] * (ig - iaf) ** 2
        src += (v1[k] - v2[k]) * il + v1[k] * ig
        if u[N_U_PER_PHASE * k + U_HB_ON] > 0.5:
            src -= 0.5 * (v1[k] + v2[k]) * icm
    return de, diss, src
