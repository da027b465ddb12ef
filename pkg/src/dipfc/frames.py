"""Rotating-frame transforms and grid synchronization.

Park transforms use the amplitude-invariant convention: a signal
``A cos(theta + phi)`` maps to ``d = A cos(phi)``, ``q = A sin(phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi
_SHIFT = TWO_PI / 3.0

SOGI_GAIN = math.sqrt(2.0)


@dataclass(frozen=True)
class DqVector:
    d: float = 0.0
    q: float = 0.0

    @property
    def magnitude(self) -> float:
        return math.hypot(self.d, self.q)

    def rotate(self, angle: float) -> "DqVector":
        c, s = math.cos(angle), math.sin(angle)
        return DqVector(c * self.d - s * self.q, s * self.d + c * self.q)

    def __add__(self, other: "DqVector") -> "DqVector":
        return DqVector(self.d + other.d, self.q + other.q)

    def __sub__(self, other: "DqVector") -> "DqVector":
        return DqVector(self.d - other.d, self.q - other.q)

    def __complex__(self) -> complex:
        return complex(self.d, self.q)


def abc_to_dq(a, b, c, theta):
    """Amplitude-invariant Park transform (returns ``DqVector`` for scalars)."""
    ca = np.cos(theta)
    cb = np.cos(theta - _SHIFT)
    cc = np.cos(theta + _SHIFT)
    sa = np.sin(theta)
    sb = np.sin(theta - _SHIFT)
    sc = np.sin(theta + _SHIFT)
    d = (2.0 / 3.0) * (a * ca + b * cb + c * cc)
    q = -(2.0 / 3.0) * (a * sa + b * sb + c * sc)
    if np.ndim(d) == 0:
        return DqVector(float(d), float(q))
    return d, q


def dq_to_abc(dq, theta):
    """Inverse of :func:`abc_to_dq` for balanced (zero-sequence-free) sets."""
    d, q = (dq.d, dq.q) if isinstance(dq, DqVector) else dq
    a = d * np.cos(theta) - q * np.sin(theta)
    b = d * np.cos(theta - _SHIFT) - q * np.sin(theta - _SHIFT)
    c = d * np.cos(theta + _SHIFT) - q * np.sin(theta + _SHIFT)
    return a, b, c


def alphabeta_to_dq(alpha: float, beta: float, theta: float) -> DqVector:
    c, s = math.cos(theta), math.sin(theta)
    return DqVector(alpha * c + beta * s, -alpha * s + beta * c)


def dq_to_single(dq: DqVector, theta: float) -> float:
    """Phase-a value of a dq vector at angle ``theta``."""
    return dq.d * math.cos(theta) - dq.q * math.sin(theta)


@dataclass(frozen=True)
class SyncState:
    theta: float = 0.0
    omega: float = TWO_PI * 50.0
    integrator: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", self.theta % TWO_PI)


@dataclass(frozen=True)
class SogiState:
    """Second-order generalized integrator: ``alpha`` tracks the input, ``beta`` lags it by 90 deg."""

    alpha: float = 0.0
    beta: float = 0.0
    gain: float = SOGI_GAIN


def sogi_step(state: SogiState, x: float, omega: float, dt: float, substeps: int = 4) -> SogiState:
    """Advance the SOGI by ``dt`` with the input held (RK4 substeps)."""
    k = state.gain
    h = dt / substeps
    a, b = state.alpha, state.beta

    def f(a, b):
        return k * omega * (x - a) - omega * b, omega * a

    for _ in range(substeps):
        k1a, k1b = f(a, b)
        k2a, k2b = f(a + 0.5 * h * k1a, b + 0.5 * h * k1b)
        k3a, k3b = f(a + 0.5 * h * k2a, b + 0.5 * h * k2b)
        k4a, k4b = f(a + h * k3a, b + h * k3b)
        a += h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
        b += h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
    return replace(state, alpha=a, beta=b)


def single_phase_to_dq(x: float, sync: SyncState, osg_state: SogiState, dt: float) -> tuple[DqVector, SogiState]:
    """Project a single-phase signal onto the rotating frame through a SOGI.

    ``osg_state`` is advanced by ``dt`` at the synchronized frequency and the
    new state is returned together with the projection.
    """
    osg = sogi_step(osg_state, x, sync.omega, dt)
    return alphabeta_to_dq(osg.alpha, osg.beta, sync.theta), osg


@dataclass(frozen=True)
class PllGains:
    kp: float
    ki: float
    omega_nominal: float = TWO_PI * 50.0


def design_pll(bandwidth: float = 2 * math.pi * 20.0, zeta: float = math.sqrt(2) / 2,
               f_nominal: float = 50.0) -> PllGains:
    """PI gains for an amplitude-normalized SRF-PLL (unit error gain)."""
    return PllGains(kp=2.0 * zeta * bandwidth, ki=bandwidth ** 2, omega_nominal=TWO_PI * f_nominal)


@dataclass
class SinglePhasePll:
    """SOGI-based PLL for a single-phase voltage."""

    gains: PllGains = field(default_factory=design_pll)
    sync: SyncState = field(default_factory=SyncState)
    osg: SogiState = field(default_factory=SogiState)

    def step(self, v: float, dt: float) -> SyncState:
        dq, self.osg = single_phase_to_dq(v, self.sync, self.osg, dt)
        self.sync = sync_step(dq, self.sync, dt, self.gains)
        return self.sync


def sync_step(v_ref, sync: SyncState, dt: float, gains: PllGains | None = None) -> SyncState:
    """One SRF-PLL update driving the reference's q component to zero.

    ``v_ref`` is either a ``DqVector`` already expressed in the frame of
    ``sync.theta`` or an ``(a, b, c)`` triple that is transformed here.
    """
    if not dt > 0.0:
        raise ValueError("dt must be > 0")
    gains = gains or design_pll()
    if not isinstance(v_ref, DqVector):
        a, b, c = v_ref
        v_ref = abc_to_dq(a, b, c, sync.theta)
    mag = v_ref.magnitude
    err = v_ref.q / mag if mag > 1e-9 else 0.0
    integ = sync.integrator + gains.ki * err * dt
    omega = gains.omega_nominal + gains.kp * err + integ
    return SyncState(theta=sync.theta + omega * dt, omega=omega, integrator=integ)
