"""Choke and X-capacitor sizing for the interconnecting H-bridge."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass


class FilterDesignWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FilterSpec:
    """Ripple and attenuation targets.

    ``attenuation_decades`` is a signed decade exponent on the switching
    frequency: ``f_c = 10**A * f_sw``, so ``A = -1`` puts the corner a decade
    below ``f_sw``.
    """

    v_dc_bus: float
    f_sw: float
    i_ripple_dm: float
    i_ripple_cm: float
    attenuation_decades: float = -1.0

    @property
    def corner_frequency(self) -> float:
        return 10.0 ** self.attenuation_decades * self.f_sw


# ripple targets that reproduce the Table-I and Table-II chokes
TABLE1_FILTER = FilterSpec(v_dc_bus=800.0, f_sw=100e3, i_ripple_dm=20.0, i_ripple_cm=1.0)
TABLE2_FILTER = FilterSpec(v_dc_bus=400.0, f_sw=100e3, i_ripple_dm=10.0, i_ripple_cm=2.0)


def _choke(v_dc_bus: float, f_sw: float, ripple: float) -> float:
    if f_sw <= 0.0 or ripple <= 0.0:
        raise ZeroDivisionError("switching frequency and ripple must be > 0")
    return v_dc_bus / (4.0 * f_sw * ripple)


def size_dm_choke(spec: FilterSpec) -> float:
    """Differential-mode choke for the peak-to-peak DM ripple (worst case at 50 % duty)."""
    return _choke(spec.v_dc_bus, spec.f_sw, spec.i_ripple_dm)


def size_cm_choke(spec: FilterSpec) -> float:
    return _choke(spec.v_dc_bus, spec.f_sw, spec.i_ripple_cm)


def size_cx(spec: FilterSpec, l_dm: float) -> float:
    """X-capacitor placing the DM filter corner ``1/(2 pi sqrt(2 L_DM C_X))`` at ``10**A f_sw``."""
    if spec.attenuation_decades >= 0.0:
        warnings.warn(
            "corner frequency at or above the switching frequency gives no attenuation",
            FilterDesignWarning,
            stacklevel=2,
        )
    if l_dm <= 0.0:
        raise ValueError("L_DM must be > 0")
    wc = 2.0 * math.pi * spec.corner_frequency
    return 1.0 / (wc * wc * 2.0 * l_dm)


def dm_corner_frequency(l_dm: float, c_x: float) -> float:
    return 1.0 / (2.0 * math.pi * math.sqrt(2.0 * l_dm * c_x))


@dataclass(frozen=True)
class FilterDesign:
    l_dm: float
    l_cm: float
    c_x: float
    f_c: float

    def as_dict(self) -> dict:
        return {"L_DM_H": self.l_dm, "L_CM_H": self.l_cm, "C_X_F": self.c_x, "f_c_Hz": self.f_c}


def design_filter(spec: FilterSpec) -> FilterDesign:
    l_dm = size_dm_choke(spec)
    c_x = size_cx(spec, l_dm)
    return FilterDesign(l_dm, size_cm_choke(spec), c_x, dm_corner_frequency(l_dm, c_x))
