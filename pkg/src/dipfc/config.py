"""Scenario configuration: grid, hardware, gains, control options, events and solver settings."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

from .control_design import HardwareParams
from .phasor import LineImpedance, Phasor
from .plant import PlantParams
from .units import UnitError, parse_quantity

SQRT3 = math.sqrt(3.0)

ACTIONS = ("enable_controller", "set_reference", "reverse_power", "bypass", "fault")


class ConfigError(ValueError):
    """Validation failure naming the offending field."""


def _check(cond: bool, field_name: str, constraint: str):
    if not cond:
        raise ConfigError(f"{field_name}: must satisfy {constraint}")


@dataclass(frozen=True)
class GridConfig:
    v_g: float = 400.0
    f_g: float = 50.0
    line_r: float = 0.164
    line_x: float = 0.080
    line_per_km: bool = True
    cable_length: float = 1.0
    line_segments: int = 2
    v2_offset: float = 0.0
    angle_offset: float = 0.0

    def validate(self):
        _check(self.v_g > 0, "grid.v_g", "> 0")
        _check(self.f_g > 0, "grid.f_g", "> 0")
        _check(self.line_r >= 0, "grid.line_r", ">= 0")
        _check(self.cable_length > 0, "grid.cable_length", "> 0")
        _check(self.line_segments >= 1, "grid.line_segments", ">= 1")
        _check(self.v2_offset < self.v1_phase, "grid.v2_offset", "< feeder-1 phase voltage")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.f_g

    @property
    def v1_phase(self) -> float:
        return self.v_g / SQRT3

    @property
    def v1(self) -> Phasor:
        return Phasor(self.v1_phase, 0.0)

    @property
    def v2(self) -> Phasor:
        return Phasor(self.v1_phase - self.v2_offset, -self.angle_offset)

    @property
    def line(self) -> LineImpedance:
        return LineImpedance(self.line_r, self.line_x, self.line_per_km, self.cable_length,
                             self.line_segments)


@dataclass(frozen=True)
class HardwareConfig:
    l_f: float = 1.0e-3
    r_f: float = 0.1
    c_f: float = 20e-6
    l_cm: float = 2.0e-3
    l_dm: float = 100e-6
    r: float = 0.1
    c_dclink: float = 2.2e-3
    r_s: float = 0.0
    v_dc_bus: float = 800.0
    c_bus: float = 2.0e-3
    l_s: float = 50e-6
    v_dclink: float = 50.0
    s_max: float = 6000.0
    r_d: float = 2.0
    l_g: float = 0.2e-3
    r_g: float = 0.05

    def validate(self):
        for name in ("l_f", "c_f", "l_cm", "l_dm", "c_dclink", "v_dc_bus", "c_bus", "v_dclink", "l_g"):
            _check(getattr(self, name) > 0, f"hardware.{name}", "> 0")
        for name in ("r_f", "r", "r_s", "l_s", "r_d", "r_g"):
            _check(getattr(self, name) >= 0, f"hardware.{name}", ">= 0")

    @property
    def params(self) -> HardwareParams:
        return HardwareParams(l_f=self.l_f, r_f=self.r_f, c_f=self.c_f, l_cm=self.l_cm, l_dm=self.l_dm,
                              r=self.r, c=self.c_dclink, r_s=self.r_s, v_dc_bus=self.v_dc_bus,
                              c_bus=self.c_bus)


@dataclass(frozen=True)
class GainConfig:
    """``None`` for a loop means "auto": tuned from the hardware at run time."""

    afe: tuple | None = None
    afe_voltage: tuple | None = None
    cm: tuple | None = None
    dm: tuple | None = None
    voltage: tuple | None = None
    series: tuple | None = None
    phase_margin_afe: float = math.radians(65.0)
    phase_margin_cm: float = math.radians(45.0)
    phase_margin_dm: float = math.radians(45.0)
    phase_margin_series: float = math.radians(45.0)
    voltage_crossover_ratio: float = 0.1
    afe_voltage_crossover_ratio: float = 0.05

    LOOPS = ("afe", "afe_voltage", "cm", "dm", "voltage", "series")

    def validate(self):
        for name in self.LOOPS:
            g = getattr(self, name)
            if g is not None:
                _check(len(g) == 2 and g[0] > 0 and g[1] > 0, f"gains.{name}", "kp > 0 and ki > 0")
        for name in ("phase_margin_afe", "phase_margin_cm", "phase_margin_dm", "phase_margin_series"):
            _check(0 < getattr(self, name) < math.pi / 2, f"gains.{name}", "0 < margin < 90 deg")
        _check(self.voltage_crossover_ratio > 0, "gains.voltage_crossover_ratio", "> 0")
        _check(self.afe_voltage_crossover_ratio > 0, "gains.afe_voltage_crossover_ratio", "> 0")


@dataclass(frozen=True)
class ControlConfig:
    dclink_ramp: float = 0.02
    reference_ramp: float = 0.02
    dm_power_feedforward: bool = True
    afe_power_feedforward: bool = True
    i_dm_limit: float = 200.0
    afe_current_limit: float = 100.0
    afe_q_ref: float = 0.0
    dc_load: float = 0.0
    ready_fraction: float = 0.95

    def validate(self):
        _check(self.dclink_ramp >= 0, "control.dclink_ramp", ">= 0")
        _check(self.reference_ramp >= 0, "control.reference_ramp", ">= 0")
        _check(self.i_dm_limit > 0, "control.i_dm_limit", "> 0")
        _check(self.afe_current_limit > 0, "control.afe_current_limit", "> 0")
        _check(0 < self.ready_fraction <= 1, "control.ready_fraction", "in (0, 1]")


@dataclass(frozen=True)
class SimConfig:
    t_end: float = 0.6
    dt_plant: float = 1e-6
    f_s: float = 10e3
    delay_samples: int = 1
    record_decimation: int = 50

    def validate(self):
        _check(self.t_end >= 0, "sim.t_end", ">= 0")
        _check(self.dt_plant > 0, "sim.dt_plant", "> 0")
        _check(self.f_s > 0, "sim.f_s", "> 0")
        _check(self.delay_samples >= 0, "sim.delay_samples", ">= 0")
        _check(self.record_decimation >= 1, "sim.record_decimation", ">= 1")
        n = self.steps_per_tick
        _check(abs(n * self.dt_plant * self.f_s - 1.0) < 1e-9, "sim.dt_plant", "dividing 1/f_s exactly")

    @property
    def steps_per_tick(self) -> int:
        return max(1, int(round(1.0 / (self.f_s * self.dt_plant))))

    @property
    def sample_time(self) -> float:
        return 1.0 / self.f_s


@dataclass(frozen=True)
class Target:
    """Series-module target: three-phase power into feeder 2, or an explicit current.

    ``angle`` is measured from the feeder-2 voltage.
    """

    p: float | None = None
    q: float | None = None
    i_rms: float | None = None
    angle: float = 0.0
    dc_load: float | None = None

    def validate(self, where: str):
        has_pq = self.p is not None or self.q is not None
        has_i = self.i_rms is not None
        _check(not (has_pq and has_i), where, "either p/q or i_rms, not both")
        if has_pq:
            _check(self.p is not None and self.q is not None, where, "both p and q")
        if has_i:
            _check(self.i_rms >= 0, f"{where}.i_rms", ">= 0")

    @property
    def sets_current(self) -> bool:
        return self.i_rms is not None or self.p is not None


@dataclass(frozen=True)
class Event:
    time: float
    action: str
    target: Target | None = None

    def validate(self, where: str):
        _check(self.time >= 0, f"{where}.time", ">= 0")
        _check(self.action in ACTIONS, f"{where}.action", f"one of {', '.join(ACTIONS)}")
        if self.target is not None:
            self.target.validate(f"{where}.target")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    description: str = ""
    figure: str = ""
    on_violation: str = "error"
    grid: GridConfig = field(default_factory=GridConfig)
    hardware: HardwareConfig = field(default_factory=HardwareConfig)
    gains: GainConfig = field(default_factory=GainConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    events: tuple = ()
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> "ScenarioConfig":
        _check(self.on_violation in ("error", "bypass"), "on_violation", "'error' or 'bypass'")
        self.grid.validate()
        self.hardware.validate()
        self.gains.validate()
        self.control.validate()
        self.sim.validate()
        last = -math.inf
        for i, ev in enumerate(self.events):
            ev.validate(f"events[{i}]")
            _check(ev.time >= last, f"events[{i}].time", "non-decreasing event times")
            last = ev.time
        return self

    @property
    def l_line(self) -> float:
        """Loop inductance: both cable runs plus the series-module inductor."""
        return self.grid.line.total.imag / self.grid.omega + self.hardware.l_s

    @property
    def z_line(self) -> complex:
        return complex(self.grid.line.total.real, self.grid.omega * self.l_line)

    def plant_params(self) -> PlantParams:
        hw = self.hardware
        return PlantParams(self.grid.line.total.real, self.l_line, hw.params, hw.r_d, hw.l_g, hw.r_g)

    def replace(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["events"] = [
            {k: v for k, v in {"time": e.time, "action": e.action,
                               "target": _target_dict(e.target)}.items() if v is not None}
            for e in self.events
        ]
        d["gains"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d["gains"].items()}
        return d


def _target_dict(t: Target | None):
    if t is None:
        return None
    return {k: v for k, v in asdict(t).items() if v is not None}


# ---------------------------------------------------------------------------
# dict -> config with unit normalization and unknown-key rejection

_UNITS = {
    "grid": {"v_g": "V", "f_g": "Hz", "line_r": "ohm", "line_x": "ohm", "line_per_km": bool,
             "cable_length": "km", "line_segments": int, "v2_offset": "V", "angle_offset": "rad"},
    "hardware": {"l_f": "H", "r_f": "ohm", "c_f": "F", "l_cm": "H", "l_dm": "H", "r": "ohm",
                 "c_dclink": "F", "r_s": "ohm", "v_dc_bus": "V", "c_bus": "F", "l_s": "H",
                 "v_dclink": "V", "s_max": "VA", "r_d": "ohm", "l_g": "H", "r_g": "ohm"},
    "gains": {"phase_margin_afe": "rad", "phase_margin_cm": "rad", "phase_margin_dm": "rad",
              "phase_margin_series": "rad", "voltage_crossover_ratio": float,
              "afe_voltage_crossover_ratio": float},
    "control": {"dclink_ramp": "s", "reference_ramp": "s", "dm_power_feedforward": bool,
                "afe_power_feedforward": bool, "i_dm_limit": "A", "afe_current_limit": "A",
                "afe_q_ref": "var", "dc_load": "W", "ready_fraction": float},
    "sim": {"t_end": "s", "dt_plant": "s", "f_s": "Hz", "delay_samples": int, "record_decimation": int},
}
_TARGET_UNITS = {"p": "W", "q": "var", "i_rms": "A", "angle": "rad", "dc_load": "W"}
_TOP_KEYS = {"name", "description", "figure", "on_violation", "grid", "hardware", "gains",
             "control", "events", "sim"}


def _convert(value, unit, where):
    if unit is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if unit is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer")
        return int(value)
    if unit is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    try:
        return parse_quantity(value, unit, where)
    except UnitError as exc:
        raise ConfigError(str(exc)) from None


def _section(data: dict, name: str, cls):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected a table")
    units = _UNITS[name]
    kwargs = {}
    gain_loops = GainConfig.LOOPS if cls is GainConfig else ()
    for key, value in data.items():
        where = f"{name}.{key}"
        if key in gain_loops:
            kwargs[key] = _gain_pair(value, where)
        elif key in units:
            kwargs[key] = _convert(value, units[key], where)
        else:
            raise ConfigError(f"{where}: unknown key")
    return cls(**kwargs)


def _gain_pair(value, where):
    if value is None or value == "auto":
        return None
    if isinstance(value, dict):
        extra = set(value) - {"kp", "ki"}
        if extra:
            raise ConfigError(f"{where}.{sorted(extra)[0]}: unknown key")
        if "kp" not in value or "ki" not in value:
            raise ConfigError(f"{where}: explicit gains need both kp and ki")
        return (_convert(value["kp"], float, f"{where}.kp"), _convert(value["ki"], float, f"{where}.ki"))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (_convert(value[0], float, f"{where}[0]"), _convert(value[1], float, f"{where}[1]"))
    raise ConfigError(f"{where}: expected 'auto', {{kp, ki}} or [kp, ki]")


def _target(data, where) -> Target:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    kw = {}
    for key, value in data.items():
        if key not in _TARGET_UNITS:
            raise ConfigError(f"{where}.{key}: unknown key")
        kw[key] = _convert(value, _TARGET_UNITS[key], f"{where}.{key}")
    return Target(**kw)


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a table")
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(f"{key}: unknown key")
    if "grid" not in data or "v_g" not in data.get("grid", {}):
        raise ConfigError("grid.v_g: required field missing")
    kw = {}
    for key in ("name", "description", "figure", "on_violation"):
        if key in data:
            if not isinstance(data[key], str):
                raise ConfigError(f"{key}: expected a string")
            kw[key] = data[key]
    kw["grid"] = _section(data["grid"], "grid", GridConfig)
    for name, cls in (("hardware", HardwareConfig), ("gains", GainConfig), ("control", ControlConfig),
                      ("sim", SimConfig)):
        if name in data:
            kw[name] = _section(data[name], name, cls)
    events = []
    for i, ev in enumerate(data.get("events", [])):
        where = f"events[{i}]"
        if not isinstance(ev, dict):
            raise ConfigError(f"{where}: expected a table")
        for key in ev:
            if key not in ("time", "action", "target"):
                raise ConfigError(f"{where}.{key}: unknown key")
        if "time" not in ev or "action" not in ev:
            raise ConfigError(f"{where}: time and action are required")
        target = _target(ev["target"], f"{where}.target") if ev.get("target") is not None else None
        events.append(Event(_convert(ev["time"], "s", f"{where}.time"), str(ev["action"]), target))
    kw["events"] = tuple(events)
    return ScenarioConfig(**kw).validate()


def field_names(cls) -> list[str]:
    return [f.name for f in fields(cls)]
