"""Scenario presets, config loading, overrides, power-target resolution and gain resolution."""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import tomli

from .config import (ConfigError, ControlConfig, Event, GainConfig, GridConfig, HardwareConfig,
                     ScenarioConfig, SimConfig, Target, config_from_dict)
from .control_design import (GainSet, LoopSpec, REFERENCE_GAINS, PiGains, tune_afe, tune_afe_voltage,
                             tune_cm, tune_dm, tune_first_order, tune_voltage)
from .phasor import Phasor, SeriesVoltageCommand, binding_constraints, r_max

SQRT2 = math.sqrt(2.0)


class EnvelopeViolationError(ValueError):
    """A feeder pair or a power target lies outside what the series module can bridge."""

    def __init__(self, message: str, constraints: list[str]):
        super().__init__(message)
        self.constraints = constraints


# ---------------------------------------------------------------------------
# reference resolution


@dataclass(frozen=True)
class ReferenceResolution:
    """Steady-state operating point that realizes a target.

    Phasors are RMS per phase in the frame where feeder 1 sits at its own
    angle. ``i_dq`` is the amplitude-invariant dq current reference in the
    frame locked to feeder 1.
    """

    current: complex
    series_voltage: complex
    command: SeriesVoltageCommand
    p: float
    q: float

    @property
    def i_dq(self) -> tuple[float, float]:
        i = SQRT2 * self.current
        return i.real, i.imag

    @property
    def i_rms(self) -> float:
        return abs(self.current)


def bypass_current(v1: Phasor, v2: Phasor, z: complex) -> complex:
    return (complex(v1) - complex(v2)) / z


def feeder2_power(v2: Phasor, current: complex) -> tuple[float, float]:
    """Three-phase (P, Q) delivered into feeder 2 by a per-phase RMS current phasor."""
    s = 3.0 * complex(v2) * current.conjugate()
    return s.real, s.imag


def resolve_target(target: Target, v1: Phasor, v2: Phasor, z: complex, v_dclink: float) -> ReferenceResolution:
    """Solve the series voltage and line current that deliver ``target`` into feeder 2.

    Power targets are inverted exactly on the complex line impedance,
    ``I = conj(S / 3) / conj(V2)`` and ``V_s = Z I - (V1 - V2)``; current targets
    are taken relative to the feeder-2 voltage angle.
    """
    if target.i_rms is not None:
        current = cmath.rect(target.i_rms, v2.angle + target.angle)
    elif target.p is not None:
        if v2.magnitude == 0.0:
            raise ValueError("feeder-2 voltage must be non-zero for a power target")
        current = (complex(target.p, target.q) / 3.0).conjugate() / complex(v2).conjugate()
    else:
        raise ValueError("target carries neither a power nor a current")
    vs = z * current - (complex(v1) - complex(v2))
    limit = v_dclink / SQRT2
    if abs(vs) > limit * (1.0 + 1e-12):
        raise EnvelopeViolationError(
            f"target needs |V_s| = {abs(vs):.3f} V RMS > {limit:.3f} V available",
            [f"series voltage {abs(vs):.4f} V > r_max V1 = {limit:.4f} V "
             f"(r = {abs(vs) / v1.magnitude:.5f} > {r_max(v_dclink, v1.magnitude):.5f})"],
        )
    r = abs(vs) / v1.magnitude
    gamma = cmath.phase(vs) - v1.angle if r > 0.0 else 0.0
    p, q = feeder2_power(v2, current)
    return ReferenceResolution(current, vs, SeriesVoltageCommand(r, gamma), p, q)


def resolve_references(targets, scenario: ScenarioConfig) -> list[ReferenceResolution]:
    """Resolve a sequence of targets on the scenario's grid and line."""
    g = scenario.grid
    return [resolve_target(t, g.v1, g.v2, scenario.z_line, scenario.hardware.v_dclink) for t in targets]


def check_envelope(scenario: ScenarioConfig) -> ScenarioConfig:
    """Gate a scenario before simulation.

    Feeders outside the operating area or infeasible targets raise
    :class:`EnvelopeViolationError`, unless ``on_violation = "bypass"``, in
    which case every enabling event is replaced by a bypass command.
    """
    g, hw = scenario.grid, scenario.hardware
    problems = binding_constraints(g.v1, g.v2, hw.v_dclink)
    for i, ev in enumerate(scenario.events):
        if ev.target is not None and ev.target.sets_current:
            try:
                resolve_target(ev.target, g.v1, g.v2, scenario.z_line, hw.v_dclink)
            except EnvelopeViolationError as exc:
                problems += [f"events[{i}]: {c}" for c in exc.constraints]
    if not problems:
        return scenario
    if scenario.on_violation == "error":
        raise EnvelopeViolationError("outside the operating envelope: " + "; ".join(problems), problems)
    events = tuple(Event(ev.time, "bypass") if ev.action in ("enable_controller", "set_reference",
                                                              "reverse_power") else ev
                   for ev in scenario.events)
    return replace(scenario, events=events)


# ---------------------------------------------------------------------------
# gains


def resolve_gains(scenario: ScenarioConfig) -> GainSet:
    """Explicit gains pass through; ``None`` entries are tuned from the hardware."""
    gc, hw = scenario.gains, scenario.hardware.params
    ts = scenario.sim.sample_time
    ctrl = scenario.control

    def pick(name, auto, limit):
        # auto gains go through (kp, ki) too, so an echoed config reproduces them bit for bit
        pair = getattr(gc, name)
        if pair is None:
            g = auto()
            pair = (g.kp, g.ki)
        return PiGains.from_kp_ki(pair[0], pair[1], limit)

    afe = pick("afe", lambda: tune_afe(hw, LoopSpec(gc.phase_margin_afe, ts)), 0.5 * hw.v_dc_bus)
    afe_v = pick("afe_voltage",
                 lambda: tune_afe_voltage(hw, SQRT2 * scenario.grid.v1_phase, afe,
                                          gc.afe_voltage_crossover_ratio),
                 ctrl.afe_current_limit)
    cm = pick("cm", lambda: tune_cm(hw, LoopSpec(gc.phase_margin_cm, ts)), 0.5 * hw.v_dc_bus)
    dm = pick("dm", lambda: tune_dm(hw, LoopSpec(gc.phase_margin_dm, ts)), hw.v_dc_bus)
    vol = pick("voltage", lambda: tune_voltage(hw, dm, crossover_ratio=gc.voltage_crossover_ratio),
               ctrl.i_dm_limit)
    r_loop = scenario.grid.line.total.real + hw.r_s
    series = pick("series",
                  lambda: tune_first_order(scenario.l_line, max(r_loop, 1e-6),
                                           LoopSpec(gc.phase_margin_series, ts)),
                  scenario.hardware.v_dclink)
    return GainSet(afe=afe, cm=cm, dm=dm, voltage=vol, series=series, afe_voltage=afe_v)


def echo_gains(scenario: ScenarioConfig, gains: GainSet) -> ScenarioConfig:
    """Scenario with every loop's gains written out explicitly."""
    explicit = {name: (getattr(gains, name).kp, getattr(gains, name).ki) for name in GainConfig.LOOPS}
    return replace(scenario, gains=replace(scenario.gains, **explicit))


# ---------------------------------------------------------------------------
# presets

ENABLE_TIME = 0.3
REVERSE_TIME = 0.5
T_END = 0.6

TABLE1_HARDWARE = HardwareConfig()
TABLE2_HARDWARE = HardwareConfig(l_f=700e-6, l_cm=500e-6, v_dc_bus=400.0)
TABLE1_GRID = GridConfig()
TABLE2_GRID = GridConfig(v_g=110.0)
# the reference voltage gain puts the outer crossover on top of the DM loop; it is tuned instead
TABLE1_GAINS = GainConfig(cm=REFERENCE_GAINS["cm"], dm=REFERENCE_GAINS["dm"])


def _base(name, description, figure, grid, hardware, gains, events) -> ScenarioConfig:
    return ScenarioConfig(name=name, description=description, figure=figure, grid=grid,
                          hardware=hardware, gains=gains, control=ControlConfig(), events=tuple(events),
                          sim=SimConfig(t_end=T_END)).validate()


def _bypass_power(grid: GridConfig, hw: HardwareConfig) -> tuple[float, float]:
    probe = ScenarioConfig(grid=grid, hardware=hw)
    return feeder2_power(grid.v2, bypass_current(grid.v1, grid.v2, probe.z_line))


def table1_scenario1() -> ScenarioConfig:
    return _base("table1-scenario1", "identical feeders, 95 A injected from 0.3 s", "fig7",
                 TABLE1_GRID, TABLE1_HARDWARE, TABLE1_GAINS,
                 [Event(ENABLE_TIME, "enable_controller", Target(i_rms=95.0, angle=0.0))])


def table1_scenario2() -> ScenarioConfig:
    hw = TABLE1_HARDWARE
    grid = replace(TABLE1_GRID, v2_offset=hw.v_dclink / SQRT2)
    p0, q0 = _bypass_power(grid, hw)
    return _base("table1-scenario2",
                 "feeder-2 magnitude lower by the envelope limit; Q compensated at 0.3 s, reversed at 0.5 s",
                 "fig8", grid, hw, TABLE1_GAINS,
                 [Event(ENABLE_TIME, "enable_controller", Target(p=p0, q=0.0)),
                  Event(REVERSE_TIME, "reverse_power", Target(p=p0, q=-q0))])


def table1_scenario3() -> ScenarioConfig:
    hw = TABLE1_HARDWARE
    angle = math.asin(min(1.0, r_max(hw.v_dclink, TABLE1_GRID.v1_phase)))
    grid = replace(TABLE1_GRID, angle_offset=angle)
    p0, q0 = _bypass_power(grid, hw)
    return _base("table1-scenario3",
                 "feeder-2 angle lagging by the envelope limit; P blocked at 0.3 s, reversed at 0.5 s",
                 "fig9", grid, hw, TABLE1_GAINS,
                 [Event(ENABLE_TIME, "enable_controller", Target(p=0.0, q=q0)),
                  Event(REVERSE_TIME, "reverse_power", Target(p=-p0, q=q0))])


TABLE2_CURRENT = 20.0


def table2_active() -> ScenarioConfig:
    p = 3.0 * TABLE2_GRID.v1_phase * TABLE2_CURRENT
    return _base("table2-active", "active power injected forward then reverse, Q held at zero", "fig11",
                 TABLE2_GRID, TABLE2_HARDWARE, GainConfig(),
                 [Event(ENABLE_TIME, "enable_controller", Target(p=p, q=0.0)),
                  Event(REVERSE_TIME, "reverse_power", Target(p=-p, q=0.0))])


def table2_reactive() -> ScenarioConfig:
    q = 3.0 * TABLE2_GRID.v1_phase * TABLE2_CURRENT
    return _base("table2-reactive", "reactive power forward then reverse, P held at zero", "fig12",
                 TABLE2_GRID, TABLE2_HARDWARE, GainConfig(),
                 [Event(ENABLE_TIME, "enable_controller", Target(p=0.0, q=q)),
                  Event(REVERSE_TIME, "reverse_power", Target(p=0.0, q=-q))])


PRESETS = {
    "table1-scenario1": table1_scenario1,
    "table1-scenario2": table1_scenario2,
    "table1-scenario3": table1_scenario3,
    "table2-active": table2_active,
    "table2-reactive": table2_reactive,
}


# ---------------------------------------------------------------------------
# loading and overrides


def read_config_file(path) -> dict:
    """Parse a TOML or JSON scenario file into a plain dict."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None


def _parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings; list items are addressed by index (``events.1.time``)."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for i, part in enumerate(parts[:-1]):
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                except (ValueError, IndexError):
                    raise ConfigError(f"override {key}: no list item {part!r}") from None
            else:
                if part not in node or node[part] is None:
                    node[part] = {}
                node = node[part]
        last = parts[-1]
        value = _parse_override_value(text.strip())
        if isinstance(node, list):
            try:
                node[int(last)] = value
            except (ValueError, IndexError):
                raise ConfigError(f"override {key}: no list item {last!r}") from None
        else:
            node[last] = value
    return data


def load_config(source, overrides=None) -> ScenarioConfig:
    """Load a preset by name or a TOML/JSON file, apply overrides and validate."""
    if isinstance(source, ScenarioConfig):
        data = source.to_dict()
    elif str(source) in PRESETS:
        data = PRESETS[str(source)]().to_dict()
    else:
        data = read_config_file(source)
    return config_from_dict(apply_overrides(data, overrides))


def dump_config(scenario: ScenarioConfig) -> str:
    return json.dumps(scenario.to_dict(), indent=2, sort_keys=False)
