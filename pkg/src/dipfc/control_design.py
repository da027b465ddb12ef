"""PI tuning for the AFE, common-mode, differential-mode and dc-link voltage loops.

Current loops are first-order plants ``1/(R + sL)`` behind a computation delay
``exp(-s T_d)``. Placing the PI zero on the plant pole leaves
``G_OL = omega_c exp(-s T_d) / s``, so the crossover follows directly from
the requested phase margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

HALF_PI = 0.5 * math.pi


class StabilityCriterionError(ValueError):
    pass


class TuningError(ValueError):
    pass


class CrossoverNotFoundError(RuntimeError):
    pass


class InnerLoopUnstableError(RuntimeError):
    pass


@dataclass(frozen=True)
class PiGains:
    kp: float
    tau_i: float
    output_limit: float = math.inf

    def __post_init__(self):
        if not self.kp > 0.0:
            raise ValueError(f"kp must be > 0, got {self.kp}")
        if not self.tau_i > 0.0:
            raise ValueError(f"tau_i must be > 0, got {self.tau_i}")

    @property
    def ki(self) -> float:
        return self.kp / self.tau_i

    @classmethod
    def from_kp_ki(cls, kp: float, ki: float, output_limit: float = math.inf) -> "PiGains":
        return cls(kp, kp / ki, output_limit)

    def with_limit(self, output_limit: float) -> "PiGains":
        return PiGains(self.kp, self.tau_i, output_limit)


@dataclass(frozen=True)
class LoopSpec:
    phase_margin: float
    sample_time: float = 1e-4
    delay: float | None = None

    def __post_init__(self):
        if not 0.0 < self.phase_margin < HALF_PI:
            raise ValueError("phase margin must lie in (0, pi/2)")
        if not self.sample_time > 0.0:
            raise ValueError("sample time must be > 0")
        if self.delay is None:
            object.__setattr__(self, "delay", 1.5 * self.sample_time)

    @classmethod
    def degrees(cls, phase_margin_deg: float, sample_time: float = 1e-4, delay: float | None = None) -> "LoopSpec":
        return cls(math.radians(phase_margin_deg), sample_time, delay)

    @property
    def crossover(self) -> float:
        return (HALF_PI - self.phase_margin) / self.delay


@dataclass(frozen=True)
class HardwareParams:
    """Per-phase power-stage parameters (SI units)."""

    l_f: float = 1.0e-3
    r_f: float = 0.1
    c_f: float = 20e-6
    l_cm: float = 2.0e-3
    l_dm: float = 100e-6
    r: float = 0.1
    c: float = 2.2e-3
    r_s: float = 0.0
    v_dc_bus: float = 800.0
    c_bus: float = 2.0e-3

    def __post_init__(self):
        for name in ("l_f", "c_f", "l_cm", "l_dm", "c", "c_bus", "v_dc_bus"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0")
        for name in ("r_f", "r", "r_s"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def l_cm_loop(self) -> float:
        """Inductance seen by the common-mode current."""
        return self.l_cm + 0.5 * self.l_dm


@dataclass
class FrequencyResponse:
    omega: np.ndarray
    magnitude: np.ndarray
    phase: np.ndarray
    crossover: float
    phase_margin_measured: float
    gain_at_crossover: complex = field(default=complex("nan"))

    @property
    def phase_margin_deg(self) -> float:
        return math.degrees(self.phase_margin_measured)


def tune_afe(hw: HardwareParams, spec: LoopSpec) -> PiGains:
    """AFE current-loop gains: ``K_P = L_f / (1.5 a T_s)``, ``tau_i = L_f / R_f``."""
    slack = HALF_PI - spec.phase_margin
    a = 1.0 / slack
    if a < 2.0 * (1.0 - 1e-12):
        raise StabilityCriterionError(
            f"a = 1/(pi/2 - phase_margin) = {a:.4f} < 2; request phase margin >= "
            f"{math.degrees(HALF_PI - 0.5):.2f} deg"
        )
    if hw.r_f == 0.0:
        raise TuningError("R_f = 0 leaves tau_i undefined; use a pure P controller")
    kp = hw.l_f / (1.5 * a * spec.sample_time)
    return PiGains(kp, hw.l_f / hw.r_f, output_limit=0.5 * hw.v_dc_bus)


def tune_first_order(inductance: float, resistance: float, spec: LoopSpec,
                     output_limit: float = math.inf) -> PiGains:
    """Pole-zero cancelling PI for ``1/(resistance + s inductance)`` behind ``spec.delay``."""
    if resistance <= 0.0:
        raise TuningError("path resistance = 0 leaves tau_i undefined; use a pure P controller")
    return PiGains(spec.crossover * inductance, inductance / resistance, output_limit)


def tune_cm(hw: HardwareParams, spec: LoopSpec) -> PiGains:
    return tune_first_order(hw.l_cm_loop, 0.5 * hw.r, spec, output_limit=0.5 * hw.v_dc_bus)


def tune_dm(hw: HardwareParams, spec: LoopSpec) -> PiGains:
    return tune_first_order(2.0 * hw.l_dm, 2.0 * hw.r, spec, output_limit=hw.v_dc_bus)


def dm_crossover(gdm: PiGains, hw: HardwareParams) -> float:
    return gdm.kp / (2.0 * hw.l_dm)


def tune_voltage(hw: HardwareParams, inner: PiGains, spec: LoopSpec | None = None,
                 crossover_ratio: float = 0.1, output_limit: float = math.inf) -> PiGains:
    """Outer dc-link loop: ``K_P,V = omega_c,V C`` with ``omega_c,V = ratio * omega_c,DM``.

    ``crossover_ratio=0.1`` is the decade separation of the design rule;
    ``crossover_ratio=1.0`` reproduces the reference ``K_P,V = 12``.
    The integral corner sits one decade below crossover.
    """
    wcv = crossover_ratio * dm_crossover(inner, hw)
    return PiGains(wcv * hw.c, 10.0 / wcv, output_limit)


def _pi(g: PiGains, s: complex) -> complex:
    return g.kp * (1.0 + 1.0 / (g.tau_i * s))


def eval_ol_cm(g: PiGains, hw: HardwareParams, spec: LoopSpec, omega):
    s = 1j * np.asarray(omega, dtype=float)
    return _pi(g, s) * np.exp(-s * spec.delay) / (0.5 * hw.r + s * hw.l_cm_loop)


def eval_ol_dm(g: PiGains, hw: HardwareParams, spec: LoopSpec, omega):
    s = 1j * np.asarray(omega, dtype=float)
    return _pi(g, s) * np.exp(-s * spec.delay) / (2.0 * hw.r + s * 2.0 * hw.l_dm)


def eval_ol_voltage(gv: PiGains, gdm: PiGains, hw: HardwareParams, spec: LoopSpec, omega,
                    check_inner: bool = True):
    """Voltage loop around the closed DM current loop and the dc-link capacitor."""
    if check_inner:
        n = unstable_closed_loop_poles(lambda w: eval_ol_dm(gdm, hw, spec, w), n_integrators=1)
        if n:
            raise InnerLoopUnstableError(f"DM current loop has {n} right-half-plane pole(s)")
    s = 1j * np.asarray(omega, dtype=float)
    g_in = eval_ol_dm(gdm, hw, spec, omega)
    return _pi(gv, s) * g_in / (1.0 + g_in) * (1.0 + s * hw.r_s * hw.c) / (s * hw.c)


def eval_ol_afe(g: PiGains, hw: HardwareParams, spec: LoopSpec, omega):
    s = 1j * np.asarray(omega, dtype=float)
    return _pi(g, s) * np.exp(-s * 1.5 * spec.sample_time) / (hw.r_f + s * hw.l_f)


def unstable_closed_loop_poles(eval_fn: Callable, n_integrators: int = 0,
                               sweep: Sequence[float] = (1e-3, 1e8, 40000)) -> int:
    """Right-half-plane poles of ``1/(1+L)`` by the Nyquist winding of ``1 + L(jw)``.

    ``L`` must have no open-loop RHP poles; ``n_integrators`` poles at the
    origin are handled by the usual right-hand indentation.
    """
    w = np.logspace(math.log10(sweep[0]), math.log10(sweep[1]), int(sweep[2]))
    f = 1.0 + np.asarray(eval_fn(w))
    arg = np.unwrap(np.angle(f))
    delta = arg[-1] - arg[0]
    z = 0.5 * n_integrators - delta / math.pi
    return max(0, int(round(z)))


def measure_margins(eval_fn: Callable, sweep: Sequence[float] = (1.0, 1e6, 2000)) -> FrequencyResponse:
    """Gain crossover and phase margin from a log-spaced sweep of ``eval_fn``.

    The crossover is the lowest unity-gain point, found by log-log
    interpolation between sweep points.
    """
    w_min, w_max, n = float(sweep[0]), float(sweep[1]), int(sweep[2])
    if n < 200:
        raise ValueError("use at least 200 sweep points")
    w = np.logspace(math.log10(w_min), math.log10(w_max), n)
    g = np.asarray(eval_fn(w), dtype=complex)
    mag = np.abs(g)
    phase = np.unwrap(np.angle(g))
    logm = np.log10(mag)
    idx = np.nonzero((logm[:-1] >= 0.0) & (logm[1:] < 0.0) | (logm[:-1] < 0.0) & (logm[1:] >= 0.0))[0]
    if idx.size == 0:
        raise CrossoverNotFoundError(f"|G| does not cross 1 within [{w_min:g}, {w_max:g}] rad/s")
    i = int(idx[0])
    lw0, lw1 = math.log10(w[i]), math.log10(w[i + 1])
    frac = logm[i] / (logm[i] - logm[i + 1])
    wc = 10.0 ** (lw0 + frac * (lw1 - lw0))
    gc = complex(np.asarray(eval_fn(np.array([wc])))[0])
    pm = math.pi + math.atan2(gc.imag, gc.real)
    if pm > math.pi:
        pm -= 2.0 * math.pi
    return FrequencyResponse(w, mag, phase, wc, pm, gc)


@dataclass(frozen=True)
class GainSet:
    afe: PiGains
    cm: PiGains
    dm: PiGains
    voltage: PiGains
    series: PiGains
    afe_voltage: PiGains

    def as_dict(self) -> dict:
        return {
            name: {"kp": g.kp, "ki": g.ki, "tau_i": g.tau_i, "output_limit": g.output_limit}
            for name, g in self.__dict__.items()
        }


# reference gains for Table-I hardware
REFERENCE_GAINS = {
    "cm": (10.0, 261.0),
    "dm": (1.16, 1160.0),
    "voltage": (12.0, 500.0),
}

PHASE_MARGIN_PRESETS = {
    "cm": math.radians(45.0),
    "dm": math.radians(45.0),
    "dm_reference": math.radians(40.2),
    "afe": math.radians(65.0),
    "series": math.radians(45.0),
}


def tune_afe_voltage(hw: HardwareParams, v_grid_peak: float, inner: PiGains,
                     crossover_ratio: float = 0.05, output_limit: float = math.inf) -> PiGains:
    """dc-bus voltage loop of the three-phase AFE.

    The bus sees ``1.5 V_d I_d / v_bus`` from the d-axis current, so the
    plant gain is ``1.5 V_d / (v_bus s C_bus)``.
    """
    wc_inner = inner.kp / hw.l_f
    wc = crossover_ratio * wc_inner
    plant_gain = 1.5 * v_grid_peak / hw.v_dc_bus
    return PiGains(wc * hw.c_bus / plant_gain, 10.0 / wc, output_limit)
