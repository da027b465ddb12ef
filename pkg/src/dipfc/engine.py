"""Fixed-step simulation of the composed plant with sampled, delayed controllers and an event schedule."""

from __future__ import annotations

import cmath
import math
import time as _time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import plant as pl
from .config import ScenarioConfig, SimConfig, Target
from .controllers import AfeController, HBridgeController, SeriesModuleController, series_power_abc
from .frames import DqVector, SyncState, abc_to_dq, design_pll, sync_step
from .scenario import GainSet, ReferenceResolution, check_envelope, resolve_gains, resolve_target

BYPASS, CHARGING, ACTIVE, FAULT = 0, 1, 2, 3
MODE_NAMES = {BYPASS: "bypass", CHARGING: "charging", ACTIVE: "active", FAULT: "fault"}
UNDERVOLTAGE = 1.0
_SHIFTS = np.array([0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0])
_BLOWUP = 1e9


class SimulationDivergedError(RuntimeError):
    """NaN or runaway state; carries the last valid time and the partial results."""

    def __init__(self, message: str, t_last: float, series: "TimeSeries", summary: "SummaryReport"):
        super().__init__(message)
        self.t_last = t_last
        self.series = series
        self.summary = summary


@dataclass
class TimeSeries:
    channels: dict

    @property
    def time(self) -> np.ndarray:
        return self.channels["time"]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def __len__(self) -> int:
        return len(self.channels["time"])

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def window(self, t0: float, t1: float) -> np.ndarray:
        t = self.time
        return (t >= t0 - 1e-12) & (t < t1 - 1e-12)


@dataclass
class SummaryReport:
    scenario: str
    segments: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    gains: dict = field(default_factory=dict)
    references: list = field(default_factory=list)
    wall_time: float = 0.0
    diverged: bool = False
    t_last: float | None = None
    envelope_violation: bool = False

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "diverged": self.diverged,
            "t_last": self.t_last,
            "wall_time_s": self.wall_time,
            "envelope_violation": self.envelope_violation,
            "segments": self.segments,
            "notes": self.notes,
            "gains": self.gains,
            "references": self.references,
        }


# ---------------------------------------------------------------------------
# steady-state initial condition


def _waveforms(phasor: complex, omega: float, t: float) -> np.ndarray:
    """Instantaneous three-phase values of a positive-sequence RMS phasor."""
    return np.array([(math.sqrt(2.0) * phasor * cmath.exp(1j * (omega * t + s))).real for s in _SHIFTS])


def initial_state(scenario: ScenarioConfig) -> tuple[np.ndarray, complex]:
    """Bypass steady state: line current from the feeder difference, idle AFE at its bus setpoint.

    Returns the state and the converter-side node voltage phasor that keeps the
    AFE current at zero.
    """
    g, hw = scenario.grid, scenario.hardware
    w = g.omega
    v1, v2 = complex(g.v1), complex(g.v2)
    i0 = (v1 - v2) / scenario.z_line
    zc = 1.0 / (1j * w * hw.c_f)
    ig = v1 / (hw.r_g + 1j * w * hw.l_g + hw.r_d + zc)
    vcf = ig * zc
    vnode = vcf + hw.r_d * ig
    x = np.zeros(pl.N_STATE)
    il, vc, gr = _waveforms(i0, w, 0.0), _waveforms(vcf, w, 0.0), _waveforms(ig, w, 0.0)
    for k in range(3):
        b = pl.N_PER_PHASE * k
        x[b + pl.I_LINE] = il[k]
        x[b + pl.V_CF] = vc[k]
        x[b + pl.I_GRID] = gr[k]
    x[pl.V_BUS] = hw.v_dc_bus
    return x, vnode


# ---------------------------------------------------------------------------
# run


@dataclass
class _Ramp:
    start: DqVector
    end: DqVector
    t0: float
    duration: float

    def at(self, t: float) -> DqVector:
        if self.duration <= 0.0 or t >= self.t0 + self.duration:
            return self.end
        f = max(0.0, (t - self.t0) / self.duration)
        return DqVector(self.start.d + f * (self.end.d - self.start.d),
                        self.start.q + f * (self.end.q - self.start.q))


def event_ticks(scenario: ScenarioConfig, sim: SimConfig) -> list[int]:
    """Controller tick at which each event takes effect (first tick at or after its time)."""
    return [int(math.ceil(ev.time * sim.f_s - 1e-9)) for ev in scenario.events]


def _reverse(target: Target | None) -> Target | None:
    if target is None:
        return None
    if target.i_rms is not None:
        return replace(target, angle=target.angle + math.pi)
    if target.p is not None:
        return replace(target, p=-target.p, q=-target.q)
    return target


def run(scenario: ScenarioConfig, sim: SimConfig | None = None,
        gains: GainSet | None = None) -> tuple[TimeSeries, SummaryReport]:
    """Simulate ``scenario``; returns the recorded channels and a per-segment summary.

    Raises :class:`SimulationDivergedError` on NaN or runaway states.
    """
    wall0 = _time.perf_counter()
    sim = sim or scenario.sim
    sim.validate()
    scenario = check_envelope(scenario.validate())
    gains = gains or resolve_gains(scenario)
    g, hw, ctrl = scenario.grid, scenario.hardware, scenario.control
    hwp = hw.params
    w = g.omega
    ts = sim.sample_time
    n_sub = sim.steps_per_tick
    dt = ts / n_sub
    n_ticks = int(round(sim.t_end * sim.f_s))
    dec = sim.record_decimation

    pp = scenario.plant_params()
    v1p, v2p = g.v1, g.v2
    p = pp.to_array(math.sqrt(2.0) * v1p.magnitude, v1p.angle, math.sqrt(2.0) * v2p.magnitude,
                    v2p.angle, w)
    x, vnode = initial_state(scenario)

    afe = AfeController(gains.afe, gains.afe_voltage, hwp, ctrl.afe_current_limit)
    hb = HBridgeController(gains.cm, gains.dm, gains.voltage, hwp, ctrl.i_dm_limit,
                           ctrl.dm_power_feedforward)
    series = SeriesModuleController(gains.series, scenario.l_line, hw.v_dclink)
    # command delay plus the DM closed-loop lag
    ff_advance = (sim.delay_samples + 0.5) * ts + 2.0 * hw.l_dm / gains.dm.kp
    pll = design_pll(f_nominal=g.f_g)
    sync = SyncState(theta=v1p.angle, omega=w)

    summary = SummaryReport(scenario.name, gains=gains.as_dict())

    # command pipeline pre-filled with the idle AFE command
    pipeline = deque()
    for i in range(sim.delay_samples):
        u0 = np.zeros(pl.N_INPUT)
        u0[pl.U_AFE:pl.U_LOAD:pl.N_U_PER_PHASE] = _waveforms(vnode, w, (i + 0.5) * ts)
        u0[pl.U_LOAD] = ctrl.dc_load
        pipeline.append(u0)

    n_steps = n_ticks * n_sub
    n_rec = (n_steps + dec - 1) // dec
    rec_x = np.zeros((n_rec, pl.N_STATE))
    rec_t = np.zeros(n_rec)
    rec_i = 0
    u_hist = np.zeros((max(n_ticks, 1), pl.N_INPUT))
    mode_hist = np.zeros(max(n_ticks, 1), dtype=np.int8)
    # zero while no series reference is active
    iref_hist = np.zeros((max(n_ticks, 1), 2))

    ticks = event_ticks(scenario, sim)
    ev_queue = sorted(zip(ticks, range(len(ticks))))
    ev_pos = 0
    mode = BYPASS
    load = ctrl.dc_load
    pending: Target | None = None
    current_target: Target | None = None
    ramp: _Ramp | None = None
    dclink_ramp: _Ramp | None = None
    last_applied = pipeline[0] if pipeline else None
    i_ref = DqVector()

    def note(t, kind, detail=""):
        summary.notes.append({"time": round(t, 9), "kind": kind, "detail": detail})

    def resolve(target: Target) -> ReferenceResolution:
        res = resolve_target(target, v1p, v2p, scenario.z_line, hw.v_dclink)
        summary.references.append({
            "p": res.p, "q": res.q, "i_rms": res.i_rms,
            "i_angle_deg": math.degrees(cmath.phase(res.current)),
            "v_series_rms": abs(res.series_voltage), "r": res.command.r, "gamma": res.command.gamma,
        })
        return res

    def to_bypass(t, new_mode):
        nonlocal mode, ramp, dclink_ramp
        mode = new_mode
        ramp = None
        dclink_ramp = None
        series.reset()
        hb.reset()
        for k in range(3):
            x[pl.N_PER_PHASE * k + pl.I_CM] = 0.0
            x[pl.N_PER_PHASE * k + pl.I_DM] = 0.0

    t = 0.0
    for k in range(n_ticks):
        t = k * ts
        # events
        while ev_pos < len(ev_queue) and ev_queue[ev_pos][0] <= k:
            ev = scenario.events[ev_queue[ev_pos][1]]
            ev_pos += 1
            target = ev.target
            if ev.action == "reverse_power" and target is None:
                target = _reverse(current_target if current_target is not None else pending)
            if target is not None and target.dc_load is not None:
                load = target.dc_load
            if target is not None and not target.sets_current:
                target = None
            if ev.action in ("bypass", "fault"):
                to_bypass(t, BYPASS if ev.action == "bypass" else FAULT)
                note(t, ev.action)
                continue
            if mode == FAULT:
                note(t, "ignored", f"{ev.action} while faulted")
                continue
            if ev.action == "enable_controller" and mode == BYPASS:
                mode = CHARGING
                hb.reset()
                dclink_ramp = _Ramp(DqVector(float(min(x[1::pl.N_PER_PHASE][:3]))), DqVector(hw.v_dclink),
                                    t, ctrl.dclink_ramp)
                note(t, "charging")
            if target is not None:
                if mode == ACTIVE:
                    res = resolve(target)
                    ramp = _Ramp(i_ref, DqVector(*res.i_dq), t, ctrl.reference_ramp)
                    current_target = target
                else:
                    pending = target

        # sampling
        i_line = x[pl.I_LINE:pl.V_BUS:pl.N_PER_PHASE]
        v_c = x[pl.V_DCLINK:pl.V_BUS:pl.N_PER_PHASE]
        i_cm = x[pl.I_CM:pl.V_BUS:pl.N_PER_PHASE]
        i_dm = x[pl.I_DM:pl.V_BUS:pl.N_PER_PHASE]
        i_afe = x[pl.I_AFE:pl.V_BUS:pl.N_PER_PHASE]
        v_cf = x[pl.V_CF:pl.V_BUS:pl.N_PER_PHASE]
        v_bus = x[pl.V_BUS]
        v1, v2 = pl.grid_voltages(t, p)
        theta = sync.theta
        theta_apply = theta + w * (sim.delay_samples + 0.5) * ts
        if last_applied is not None:
            u_s = np.where(v_c > pp.v_eps, np.clip(last_applied[pl.U_SERIES:pl.U_LOAD:pl.N_U_PER_PHASE], -v_c, v_c), 0.0)
        else:
            u_s = np.zeros(3)
        p_series = u_s * i_line

        # mode transitions
        if mode == CHARGING and t >= dclink_ramp.t0 + dclink_ramp.duration \
                and v_c.min() >= ctrl.ready_fraction * hw.v_dclink:
            mode = ACTIVE
            i_meas = abc_to_dq(*i_line, theta)
            v1dq = abc_to_dq(*v1, theta)
            v2dq = abc_to_dq(*v2, theta)
            series.preload(i_meas, v1dq, v2dq, w)
            i_ref = i_meas
            if pending is not None:
                res = resolve(pending)
                ramp = _Ramp(i_meas, DqVector(*res.i_dq), t, ctrl.reference_ramp)
                current_target, pending = pending, None
            else:
                ramp = _Ramp(i_meas, i_meas, t, 0.0)
            note(t, "active")
        elif mode == ACTIVE and v_c.min() <= UNDERVOLTAGE:
            to_bypass(t, FAULT)
            note(t, "fault", f"dc-link under-voltage ({v_c.min():.3g} V)")

        # controllers
        u = np.zeros(pl.N_INPUT)
        u[pl.U_LOAD] = load
        p_pred = np.zeros(3)
        if mode == ACTIVE:
            i_ref = ramp.at(t)
            sout = series.step(i_line, i_ref, v1, v2, theta, sync.omega, ts, None, theta_apply)
            u[pl.U_SERIES:pl.U_LOAD:pl.N_U_PER_PHASE] = sout.u_abc
            if series.envelope_violation and not summary.envelope_violation:
                summary.envelope_violation = True
                note(t, "envelope_violation", "series voltage saturated; bypass suggested")
            iref_hist[k] = (i_ref.d, i_ref.q)
            # series power expected once the DM current has caught up with its reference
            p_pred = series_power_abc(DqVector(sout.u_d, sout.u_q), abc_to_dq(*i_line, theta),
                                      theta + w * ff_advance)
        p_ff = (float(p_series.sum()) + load) if ctrl.afe_power_feedforward else 0.0
        out = afe.step(i_afe, v_cf, v_bus, theta, sync.omega, ts, hw.v_dc_bus, ctrl.afe_q_ref,
                       p_ff, theta_apply)
        u[pl.U_AFE:pl.U_LOAD:pl.N_U_PER_PHASE] = out.u_abc
        if mode in (CHARGING, ACTIVE):
            vref = dclink_ramp.at(t).d if mode == CHARGING else hw.v_dclink
            hout = hb.step(i_cm, i_dm, v_c, 0.5 * (v1 + v2), vref, theta, sync.omega, ts, v_bus,
                           p_pred, theta_apply=theta_apply)
            u[pl.U_CM:pl.U_LOAD:pl.N_U_PER_PHASE] = hout.u_cm
            u[pl.U_DM:pl.U_LOAD:pl.N_U_PER_PHASE] = hout.u_dm
            u[pl.U_HB_ON:pl.U_LOAD:pl.N_U_PER_PHASE] = 1.0
        sync = sync_step(v1, sync, ts, pll)

        pipeline.append(u)
        applied = pipeline.popleft()
        # the H-bridge enable flag acts without pipeline delay so bypass is immediate
        applied[pl.U_HB_ON:pl.U_LOAD:pl.N_U_PER_PHASE] = u[pl.U_HB_ON:pl.U_LOAD:pl.N_U_PER_PHASE]
        if mode not in (ACTIVE,):
            applied[pl.U_SERIES:pl.U_LOAD:pl.N_U_PER_PHASE] = 0.0
        last_applied = applied
        u_hist[k] = applied
        mode_hist[k] = mode

        rec_i = pl.rk4_steps(x, applied, p, t, dt, n_sub, dec, k * n_sub, rec_x, rec_t, rec_i)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _BLOWUP:
            summary.diverged = True
            summary.t_last = t
            series_out = _build_series(rec_x[:rec_i], rec_t[:rec_i], u_hist, mode_hist, iref_hist, p, pp, sim)
            _finish(summary, series_out, scenario, sim, ticks, wall0)
            raise SimulationDivergedError(f"state diverged during the tick at t = {t:.6f} s", t,
                                          series_out, summary)

    ts_out = _build_series(rec_x[:rec_i], rec_t[:rec_i], u_hist, mode_hist, iref_hist, p, pp, sim)
    summary.t_last = n_ticks * ts
    _finish(summary, ts_out, scenario, sim, ticks, wall0)
    return ts_out, summary


# ---------------------------------------------------------------------------
# post-processing


def _build_series(rx, rt, u_hist, mode_hist, iref_hist, p, pp, sim: SimConfig) -> TimeSeries:
    n = len(rt)
    tick = np.minimum(np.floor(rt * sim.f_s + 1e-9).astype(int), max(len(u_hist) - 1, 0))
    u = u_hist[tick] if n else np.zeros((0, pl.N_INPUT))
    w = p[pl.P["omega_g"]]
    ph = w * rt[:, None] + _SHIFTS[None, :]
    v1 = p[pl.P["v1_peak"]] * np.cos(ph + p[pl.P["theta1"]])
    v2 = p[pl.P["v2_peak"]] * np.cos(ph + p[pl.P["theta2"]])
    sl = lambda off: rx[:, off:pl.V_BUS:pl.N_PER_PHASE]  # noqa: E731
    i_line, v_c = sl(pl.I_LINE), sl(pl.V_DCLINK)
    v_bus = rx[:, pl.V_BUS]
    us = u[:, pl.U_SERIES:pl.U_LOAD:pl.N_U_PER_PHASE]
    v_s = np.where(v_c > pp.v_eps, np.clip(us, -v_c, v_c), 0.0)
    half = 0.5 * np.maximum(v_bus, 0.0)[:, None]
    u_afe = np.clip(u[:, pl.U_AFE:pl.U_LOAD:pl.N_U_PER_PHASE], -half, half)
    i_afe = sl(pl.I_AFE)
    p_dc = (u_afe * i_afe).sum(axis=1)
    i_bus = p_dc / np.maximum(v_bus, 1.0)
    p_inst = (v2 * i_line).sum(axis=1)
    theta = w * rt + p[pl.P["theta1"]]
    i_d, i_q = _park(i_line, theta)
    v2d, v2q = _park(v2, theta)
    q_inst = 1.5 * (v2q * i_d - v2d * i_q)

    ch = {"time": rt.copy()}
    names = "abc"
    for key, arr in (("v1", v1), ("v2", v2), ("i_line", i_line), ("v_series", v_s), ("v_dclink", v_c),
                     ("i_cm", sl(pl.I_CM)), ("i_dm", sl(pl.I_DM)), ("i_afe", i_afe)):
        for j in range(3):
            ch[f"{key}_{names[j]}"] = arr[:, j].copy()
    ch["i_line_d"] = i_d
    ch["i_line_q"] = i_q
    iref = iref_hist[tick] if n else np.zeros((0, 2))
    ch["i_ref_d"] = iref[:, 0].copy()
    ch["i_ref_q"] = iref[:, 1].copy()
    ch["v_bus"] = v_bus.copy()
    ch["i_bus"] = i_bus
    ch["p"] = p_inst
    ch["q"] = q_inst
    ch["p_series"] = (v_s * i_line).sum(axis=1)
    ch["mode"] = mode_hist[tick].astype(float) if n else np.zeros(0)
    return TimeSeries(ch)


def _park(abc: np.ndarray, theta: np.ndarray):
    return abc_to_dq(abc[:, 0], abc[:, 1], abc[:, 2], theta)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x))) if x.size else float("nan")


def segment_bounds(scenario: ScenarioConfig, sim: SimConfig, ticks=None) -> list[tuple[float, float]]:
    ticks = event_ticks(scenario, sim) if ticks is None else ticks
    t_end = int(round(sim.t_end * sim.f_s)) / sim.f_s
    if t_end <= 0.0:
        return []
    cuts = sorted({0.0, t_end, *[min(k / sim.f_s, t_end) for k in ticks]})
    return [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


def summarize(series: TimeSeries, scenario: ScenarioConfig, sim: SimConfig, ticks=None) -> list[dict]:
    """Steady-state values over the last two grid cycles of each event segment."""
    out = []
    span = 2.0 / scenario.grid.f_g
    for a, b in segment_bounds(scenario, sim, ticks):
        w0 = max(a, b - span)
        m = series.window(w0, b)
        if not np.any(m):
            continue
        phases = "abc"
        seg = {
            "start": a, "end": b, "window_start": w0,
            "I_rms": float(np.mean([_rms(series[f"i_line_{c}"][m]) for c in phases])),
            "P": float(np.mean(series["p"][m])),
            "Q": float(np.mean(series["q"][m])),
            "v_bus_mean": float(np.mean(series["v_bus"][m])),
            "v_dclink_mean": float(np.mean([np.mean(series[f"v_dclink_{c}"][m]) for c in phases])),
            "i_cm_rms": float(np.mean([_rms(series[f"i_cm_{c}"][m]) for c in phases])),
            "i_dm_rms": float(np.mean([_rms(series[f"i_dm_{c}"][m]) for c in phases])),
            "mode": MODE_NAMES[int(series["mode"][m][-1])],
        }
        out.append(seg)
    return out


def _finish(summary, series, scenario, sim, ticks, wall0):
    summary.segments = summarize(series, scenario, sim, ticks)
    summary.wall_time = _time.perf_counter() - wall0
