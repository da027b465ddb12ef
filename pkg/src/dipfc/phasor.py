"""Steady-state phasor arithmetic for a series-injection module between two feeders.

All phasors are per-phase RMS line-to-neutral quantities.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

SQRT2 = math.sqrt(2.0)

# relative slack on envelope comparisons so that offsets placed exactly on a
# limit (as the scenario presets do) are not rejected by rounding
_ENVELOPE_RTOL = 1e-12


class SingularCircuitError(ValueError):
    pass


class OverModulationError(ValueError):
    pass


class InvalidReactanceError(ValueError):
    pass


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(angle + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    a -= math.pi
    if a <= -math.pi:
        a = math.pi
    return a


@dataclass(frozen=True)
class Phasor:
    magnitude: float
    angle: float = 0.0

    def __post_init__(self):
        if not self.magnitude >= 0.0:
            raise ValueError(f"phasor magnitude must be >= 0, got {self.magnitude}")
        object.__setattr__(self, "angle", normalize_angle(float(self.angle)))

    @classmethod
    def from_complex(cls, z: complex) -> "Phasor":
        if z == 0:
            return cls(0.0, 0.0)
        return cls(abs(z), cmath.phase(z))

    @classmethod
    def from_degrees(cls, magnitude: float, angle_deg: float) -> "Phasor":
        return cls(magnitude, math.radians(angle_deg))

    def to_complex(self) -> complex:
        return cmath.rect(self.magnitude, self.angle)

    @property
    def angle_deg(self) -> float:
        return math.degrees(self.angle)

    def __complex__(self) -> complex:
        return self.to_complex()


@dataclass(frozen=True)
class LineImpedance:
    """Series line impedance.

    With ``per_km`` set, ``resistance`` and ``reactance`` are per unit length and
    ``length`` scales them. ``segments`` counts identical cable runs in the loop
    (one per feeder side by default for a module sitting between two feeders).
    """

    resistance: float
    reactance: float
    per_km: bool = False
    length: float = 1.0
    segments: int = 1

    def __post_init__(self):
        if self.resistance < 0.0:
            raise ValueError("line resistance must be >= 0")
        if self.per_km and not self.length > 0.0:
            raise ValueError("cable length must be > 0 for per-km impedance")
        if self.segments < 1:
            raise ValueError("segments must be >= 1")

    @property
    def total(self) -> complex:
        scale = self.segments * (self.length if self.per_km else 1.0)
        return complex(self.resistance, self.reactance) * scale

    def with_series_inductance(self, inductance: float, omega: float) -> "LineImpedance":
        z = self.total
        return LineImpedance(z.real, z.imag + omega * inductance)


@dataclass(frozen=True)
class SeriesVoltageCommand:
    r: float
    gamma: float

    def __post_init__(self):
        if self.r < 0.0:
            raise ValueError("r must be >= 0")
        object.__setattr__(self, "gamma", float(self.gamma) % (2.0 * math.pi))


@dataclass(frozen=True)
class OperatingEnvelope:
    max_angle_diff: float
    max_voltage_diff: float

    @property
    def max_angle_diff_deg(self) -> float:
        return math.degrees(self.max_angle_diff)


def r_max(vdc: float, v1: float) -> float:
    """Largest modulation ratio without over-modulation."""
    return vdc / (SQRT2 * v1)


def line_current(v1: Phasor, v2: Phasor, vs: Phasor, z_total) -> Phasor:
    """Current flowing from feeder 1 to feeder 2 through the series module."""
    z = z_total.total if isinstance(z_total, LineImpedance) else complex(z_total)
    if abs(z) == 0.0:
        raise SingularCircuitError("total line impedance is zero")
    return Phasor.from_complex((complex(v1) + complex(vs) - complex(v2)) / z)


def series_voltage(cmd: SeriesVoltageCommand, v1: Phasor, vdc: float | None = None) -> Phasor:
    """Series-module voltage ``r * |V1|`` at angle ``theta1 + gamma``.

    If ``vdc`` is given the command is checked against the modulation limit.
    """
    if vdc is not None:
        limit = r_max(vdc, v1.magnitude)
        if cmd.r > limit * (1.0 + _ENVELOPE_RTOL):
            raise OverModulationError(
                f"r = {cmd.r:.6g} exceeds r_max = Vdc/(sqrt(2) V1) = {limit:.6g}"
            )
    if cmd.r == 0.0:
        return Phasor(0.0, 0.0)
    return Phasor(cmd.r * v1.magnitude, v1.angle + cmd.gamma)


def injected_power(v1: Phasor, v2: Phasor, cmd: SeriesVoltageCommand, xg: float) -> tuple[float, float]:
    """Active and reactive power injected into feeder 2 over a purely reactive line."""
    if not xg > 0.0:
        raise InvalidReactanceError(f"line reactance must be > 0, got {xg}")
    a, b = v1.magnitude, v2.magnitude
    delta = v1.angle - v2.angle
    k = a * b / xg
    p = k * math.sin(delta) + cmd.r * k * math.sin(delta + cmd.gamma)
    q = k * math.cos(delta) + cmd.r * k * math.cos(delta + cmd.gamma) - b * b / xg
    return p, q


def invert_injected_power(v1: Phasor, v2: Phasor, p: float, q: float, xg: float) -> SeriesVoltageCommand:
    """Closed-form inverse of :func:`injected_power`.

    The two power equations are linear in ``r sin(delta + gamma)`` and
    ``r cos(delta + gamma)``.
    """
    if not xg > 0.0:
        raise InvalidReactanceError(f"line reactance must be > 0, got {xg}")
    a, b = v1.magnitude, v2.magnitude
    if a == 0.0 or b == 0.0:
        raise SingularCircuitError("feeder voltages must be non-zero")
    delta = v1.angle - v2.angle
    k = a * b / xg
    s = p / k - math.sin(delta)
    c = (q + b * b / xg) / k - math.cos(delta)
    r = math.hypot(s, c)
    gamma = math.atan2(s, c) - delta if r > 0.0 else 0.0
    return SeriesVoltageCommand(r, gamma)


def operating_area(v1: Phasor, v2: Phasor, vdc: float) -> tuple[bool, OperatingEnvelope]:
    """Check whether the feeder pair lies inside the bridgeable (dV, dtheta) region.

    When ``vdc / (sqrt(2) V1)`` exceeds one the angle limit saturates at pi/2.
    """
    if not vdc > 0.0:
        raise ValueError("vdc must be > 0")
    if not v1.magnitude > 0.0:
        raise ValueError("V1 must be > 0")
    ratio = min(1.0, r_max(vdc, v1.magnitude))
    env = OperatingEnvelope(math.asin(ratio), vdc / SQRT2)
    dtheta = abs(normalize_angle(v1.angle - v2.angle))
    dv = abs(v1.magnitude - v2.magnitude)
    inside = (
        dtheta <= env.max_angle_diff * (1.0 + _ENVELOPE_RTOL)
        and dv <= env.max_voltage_diff * (1.0 + _ENVELOPE_RTOL)
    )
    return inside, env


def binding_constraints(v1: Phasor, v2: Phasor, vdc: float) -> list[str]:
    """Names of the envelope limits violated by a feeder pair (empty if inside)."""
    _, env = operating_area(v1, v2, vdc)
    out = []
    dtheta = abs(normalize_angle(v1.angle - v2.angle))
    if dtheta > env.max_angle_diff * (1.0 + _ENVELOPE_RTOL):
        out.append(
            f"angle difference {math.degrees(dtheta):.4f} deg > {env.max_angle_diff_deg:.4f} deg"
        )
    dv = abs(v1.magnitude - v2.magnitude)
    if dv > env.max_voltage_diff * (1.0 + _ENVELOPE_RTOL):
        out.append(f"voltage difference {dv:.4f} V > {env.max_voltage_diff:.4f} V")
    return out


def bypass_decision(v1: Phasor, v2: Phasor, vdc: float) -> str:
    inside, _ = operating_area(v1, v2, vdc)
    return "active" if inside else "bypass"
