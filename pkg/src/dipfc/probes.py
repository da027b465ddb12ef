"""Single-loop sampled simulations: step-response metrics and an injected-sine loop-gain sweep.

Each loop is the continuous averaged plant, held by a ZOH and stepped on a
fine grid, closed by the runtime ``pi_step`` at the control rate with the
same one-sample command pipeline as the full simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .control_design import HardwareParams, LoopSpec, PiGains
from .controllers import PiState, pi_step

LOOPS = ("cm", "dm", "voltage", "afe_current", "series_current")


class NotSettledError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepMetrics:
    rise_time: float
    overshoot: float
    settling_time: float
    final_value: float


@dataclass(frozen=True)
class LoopGainPoint:
    omega: float
    gain: complex


@dataclass(frozen=True)
class LoopModel:
    """Linear plant ``dx = A x + B u``, output ``y = C x``; ``ff`` feeds part of the state forward."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    gains: PiGains
    crossover: float
    outer: PiGains | None = None
    ff_index: int | None = None


def first_order(inductance: float, resistance: float, gains: PiGains, crossover: float) -> LoopModel:
    return LoopModel(np.array([[-resistance / inductance]]), np.array([1.0 / inductance]),
                     np.array([1.0]), gains, crossover)


def loop_model(loop: str, gains: PiGains, hw: HardwareParams, spec: LoopSpec | None = None,
               inner: PiGains | None = None, l_line: float = 0.0, r_line: float = 0.0) -> LoopModel:
    """Plant and controller for one of :data:`LOOPS`.

    The voltage loop needs the DM current gains as ``inner`` and closes both
    loops, with the measured dc-link voltage fed forward into the DM command.
    """
    spec = spec or LoopSpec(math.radians(45.0))
    if loop == "cm":
        return first_order(hw.l_cm_loop, 0.5 * hw.r, gains, gains.kp / hw.l_cm_loop)
    if loop == "dm":
        return first_order(2.0 * hw.l_dm, 2.0 * hw.r, gains, gains.kp / (2.0 * hw.l_dm))
    if loop == "afe_current":
        return first_order(hw.l_f, hw.r_f, gains, gains.kp / hw.l_f)
    if loop == "series_current":
        if not l_line > 0.0:
            raise ValueError("series_current needs l_line > 0")
        return first_order(l_line, r_line, gains, gains.kp / l_line)
    if loop == "voltage":
        if inner is None:
            raise ValueError("voltage loop needs the inner DM gains")
        a = np.array([[-hw.r / hw.l_dm, -1.0 / (2.0 * hw.l_dm)], [1.0 / hw.c, 0.0]])
        b = np.array([1.0 / (2.0 * hw.l_dm), 0.0])
        return LoopModel(a, b, np.array([0.0, 1.0]), inner, gains.kp / hw.c, outer=gains, ff_index=1)
    raise ValueError(f"unknown loop {loop!r}; expected one of {LOOPS}")


def _zoh(a: np.ndarray, b: np.ndarray, dt: float):
    n = a.shape[0]
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = a * dt
    m[:n, n] = b * dt
    e = expm(m)
    return e[:n, :n], e[:n, n]


def simulate(model: LoopModel, reference, injection, n_ticks: int, ts: float = 1e-4,
             delay_samples: int = 1, n_sub: int = 10):
    """Run the sampled loop; returns (t_fine, y_fine, controller_out, plant_in) per tick.

    ``reference`` and ``injection`` are callables of the tick index; the
    injection is added to the controller output before the delay pipeline.
    """
    ad, bd = _zoh(model.a, model.b, ts / n_sub)
    x = np.zeros(model.a.shape[0])
    pipe = [0.0] * delay_samples
    inner, outer = PiState(), PiState()
    y_f = np.empty(n_ticks * n_sub)
    c_out = np.empty(n_ticks)
    u_in = np.empty(n_ticks)
    for k in range(n_ticks):
        y = float(model.c @ x)
        r = reference(k)
        if model.outer is not None:
            i_ref, outer = pi_step(outer, r - y, model.outer, ts)
            c, inner = pi_step(inner, i_ref - x[0], model.gains, ts)
        else:
            c, inner = pi_step(inner, r - y, model.gains, ts)
        u = c + injection(k)
        if model.ff_index is not None:
            u += x[model.ff_index]
        c_out[k] = c
        u_in[k] = u
        pipe.append(u)
        applied = pipe.pop(0)
        for j in range(n_sub):
            y_f[k * n_sub + j] = model.c @ x
            x = ad @ x + bd * applied
    t_f = np.arange(n_ticks * n_sub) * (ts / n_sub)
    return t_f, y_f, c_out, u_in


def step_metrics(t: np.ndarray, y: np.ndarray, target: float, band: float = 0.02) -> StepMetrics:
    """10-90 % rise time, percent overshoot and 2 % settling time of a step response."""
    if target == 0.0:
        return StepMetrics(0.0, 0.0, 0.0, 0.0)
    yn = y / target
    i10 = np.argmax(yn >= 0.1)
    i90 = np.argmax(yn >= 0.9)
    if yn[i90] < 0.9:
        raise NotSettledError("response never reaches 90 % of the step")
    rise = float(t[i90] - t[i10])
    overshoot = max(0.0, float(yn.max() - 1.0)) * 100.0
    outside = np.nonzero(np.abs(yn - 1.0) > band)[0]
    if outside.size and outside[-1] == len(yn) - 1:
        raise NotSettledError("response is still outside the settling band at the end of the run")
    settling = float(t[outside[-1] + 1]) if outside.size else 0.0
    return StepMetrics(rise, overshoot, settling, float(y[-1]))


def step_response_probe(loop: str, magnitude: float, gains: PiGains, hw: HardwareParams,
                        ts: float = 1e-4, delay_samples: int = 1, **kw) -> StepMetrics:
    """Closed-loop step of ``magnitude`` on the reference of ``loop``.

    Raises :class:`NotSettledError` if the 2 % band is not reached within
    ``50 / omega_c``.
    """
    if magnitude == 0.0:
        return StepMetrics(0.0, 0.0, 0.0, 0.0)
    model = loop_model(loop, gains, hw, **kw)
    horizon = 50.0 / model.crossover
    n_ticks = max(int(math.ceil(2.0 * horizon / ts)), 20)
    t, y, _, _ = simulate(model, lambda k: magnitude, lambda k: 0.0, n_ticks, ts, delay_samples)
    m = step_metrics(t, y, magnitude)
    if m.settling_time > horizon:
        raise NotSettledError(f"{loop}: settling {m.settling_time:.4g} s exceeds 50/omega_c = {horizon:.4g} s")
    return m


def measure_loop_gain(model: LoopModel, periods_samples, amplitude: float = 1e-3, ts: float = 1e-4,
                      delay_samples: int = 1, settle_periods: int = 20,
                      measure_periods: int = 10) -> list[LoopGainPoint]:
    """Loop gain ``L = -C/U`` from a sine injected at the controller output.

    ``periods_samples`` lists integer periods ``M`` (in control samples), so
    the test frequencies are ``2 pi / (M T_s)`` and the DFT covers whole
    periods.
    """
    out = []
    for m_per in periods_samples:
        m_per = int(m_per)
        w = 2.0 * math.pi / (m_per * ts)
        n = (settle_periods + measure_periods) * m_per
        inj = lambda k, w=w: amplitude * math.sin(w * k * ts)  # noqa: E731
        _, _, c, u = simulate(model, lambda k: 0.0, inj, n, ts, delay_samples, n_sub=1)
        k0 = settle_periods * m_per
        ph = np.exp(-1j * w * ts * np.arange(k0, n))
        cc = np.sum(c[k0:] * ph)
        uu = np.sum(u[k0:] * ph)
        out.append(LoopGainPoint(w, -cc / uu))
    return out


def margins_from_points(points: list[LoopGainPoint]) -> tuple[float, float]:
    """Crossover frequency and phase margin interpolated from a loop-gain sweep."""
    pts = sorted(points, key=lambda p: p.omega)
    mags = np.array([abs(p.gain) for p in pts])
    for i in range(len(pts) - 1):
        if mags[i] >= 1.0 > mags[i + 1]:
            f = math.log10(mags[i]) / (math.log10(mags[i]) - math.log10(mags[i + 1]))
            lw = math.log10(pts[i].omega) + f * (math.log10(pts[i + 1].omega) - math.log10(pts[i].omega))
            ph0 = math.atan2(pts[i].gain.imag, pts[i].gain.real)
            ph1 = math.atan2(pts[i + 1].gain.imag, pts[i + 1].gain.real)
            ph1 = ph0 + (ph1 - ph0 + math.pi) % (2.0 * math.pi) - math.pi
            phase = ph0 + f * (ph1 - ph0)
            pm = math.pi + phase
            if pm > math.pi:
                pm -= 2.0 * math.pi
            return 10.0 ** lw, pm
    raise NotSettledError("loop gain does not cross unity in the swept range")
