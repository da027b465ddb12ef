"""Parsing of quantities written with SI prefixes, e.g. ``"2.2 mF"`` or ``"100 kHz"``."""

from __future__ import annotations

import math
import re

_PREFIX = {
    "p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "μ": 1e-6, "m": 1e-3, "": 1.0,
    "k": 1e3, "M": 1e6,
}

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*({_NUMBER})\s*([A-Za-zµμΩ°/]*)\s*$")

# canonical unit -> accepted spellings
_ALIASES = {
    "ohm": ("ohm", "Ohm", "Ω", "ohms"),
    "deg": ("deg", "°"),
}


class UnitError(ValueError):
    pass


def _split(unit_text: str, unit: str) -> float | None:
    spellings = _ALIASES.get(unit, (unit,))
    for sp in spellings:
        if unit_text.endswith(sp):
            prefix = unit_text[: len(unit_text) - len(sp)]
            if prefix in _PREFIX:
                return _PREFIX[prefix]
    return None


def parse_quantity(value, unit: str, field: str = "value") -> float:
    """Return ``value`` in SI units of ``unit``.

    Plain numbers are taken as already normalized. Strings may carry an SI
    prefix and the unit (``"50 uH"``, ``"2.0 mH"``). Angles accept ``deg`` or
    ``rad`` and come back in radians; lengths accept ``km`` or ``m`` and come
    back in kilometres.
    """
    if isinstance(value, bool):
        raise UnitError(f"{field}: expected a quantity in {unit}, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"{field}: expected a quantity in {unit}, got {type(value).__name__}")
    m = _QUANTITY.match(value)
    if not m:
        raise UnitError(f"{field}: cannot parse quantity {value!r}")
    number, text = float(m.group(1)), m.group(2)
    if text == "":
        return number
    if unit == "rad":
        if text == "rad":
            return number
        if text in _ALIASES["deg"]:
            return math.radians(number)
    elif unit == "km":
        if text == "km":
            return number
        if text == "m":
            return number * 1e-3
    else:
        scale = _split(text, unit)
        if scale is not None:
            return number * scale
    raise UnitError(f"{field}: unit {text!r} is not compatible with {unit}")
