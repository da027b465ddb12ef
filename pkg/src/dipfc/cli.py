"""Command line: ``run`` scenarios, ``tune`` gains, size the ``filter``, check the ``envelope``.

Exit codes: 0 success, 1 validation error, 2 simulation divergence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError
from .control_design import (LoopSpec, eval_ol_cm, eval_ol_dm, eval_ol_voltage, measure_margins)
from .filter_design import TABLE1_FILTER, TABLE2_FILTER, FilterSpec, FilterDesignWarning, design_filter
from .phasor import Phasor, binding_constraints, bypass_decision, operating_area
from .scenario import (PRESETS, EnvelopeViolationError, check_envelope, echo_gains, load_config,
                       resolve_gains)

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def run_one(source: str, out_dir: str, overrides, plots: bool = True) -> tuple[int, str]:
    """Run one scenario and write its results; returns (exit code, one-line report)."""
    from .engine import SimulationDivergedError, run
    from .report import emit_results

    try:
        sc = check_envelope(load_config(source, overrides))
        gains = resolve_gains(sc)
    except (ConfigError, EnvelopeViolationError, ValueError) as exc:
        return EXIT_INVALID, f"{source}: {exc}"
    echoed = echo_gains(sc, gains).to_dict()
    code = EXIT_OK
    try:
        series, summary = run(sc, gains=gains)
    except SimulationDivergedError as exc:
        series, summary, code = exc.series, exc.summary, EXIT_DIVERGED
    try:
        emit_results(series, summary, out_dir, echoed, sc.figure, plots)
    except OSError as exc:
        return EXIT_INVALID, f"{source}: cannot write results to {out_dir}: {exc}"
    lines = [f"{sc.name}: {'DIVERGED at t=%.6f s' % summary.t_last if code else 'ok'} "
             f"({summary.wall_time:.1f} s wall) -> {out_dir}"]
    for seg in summary.segments:
        lines.append(
            f"  [{seg['start']:.3f}, {seg['end']:.3f}) {seg['mode']:8s} I_rms={seg['I_rms']:8.2f} A "
            f"P={seg['P'] / 1e3:9.3f} kW Q={seg['Q'] / 1e3:9.3f} kvar v_bus={seg['v_bus_mean']:7.2f} V "
            f"v_dclink={seg['v_dclink_mean']:6.2f} V i_cm={seg['i_cm_rms']:.3f} A"
        )
    for n in summary.notes:
        if n["kind"] in ("fault", "envelope_violation", "ignored"):
            lines.append(f"  note t={n['time']}: {n['kind']} {n['detail']}")
    return code, "\n".join(lines)


def cmd_run(args) -> int:
    sources = args.scenario or ["table1-scenario1"]
    if len(sources) == 1:
        outs = [args.out]
    else:
        outs = [str(Path(args.out) / Path(s).stem) for s in sources]
    jobs = [(s, o, args.override, not args.no_plots) for s, o in zip(sources, outs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_one, *zip(*jobs)))
    else:
        results = [run_one(*j) for j in jobs]
    worst = EXIT_OK
    for code, text in results:
        (print if code == EXIT_OK else _err)(text)
        worst = max(worst, code)
    return worst


def cmd_tune(args) -> int:
    try:
        sc = load_config(args.scenario, args.override)
        gains = resolve_gains(sc)
    except (ConfigError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    hw = sc.hardware.params
    ts = sc.sim.sample_time
    report = {"scenario": sc.name, "gains": gains.as_dict(), "margins": {}}
    checks = {
        "cm": (lambda w, s=LoopSpec(sc.gains.phase_margin_cm, ts): eval_ol_cm(gains.cm, hw, s, w)),
        "dm": (lambda w, s=LoopSpec(sc.gains.phase_margin_dm, ts): eval_ol_dm(gains.dm, hw, s, w)),
        "voltage": (lambda w, s=LoopSpec(sc.gains.phase_margin_dm, ts):
                    eval_ol_voltage(gains.voltage, gains.dm, hw, s, w)),
    }
    for name, fn in checks.items():
        fr = measure_margins(fn)
        report["margins"][name] = {"crossover_rad_s": fr.crossover, "phase_margin_deg": fr.phase_margin_deg,
                                   "gain_at_crossover": abs(fr.gain_at_crossover)}
    text = json.dumps(report, indent=2, default=lambda o: None if o != o else str(o))
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_filter(args) -> int:
    base = {"table1": TABLE1_FILTER, "table2": TABLE2_FILTER}[args.preset]
    try:
        spec = FilterSpec(
            v_dc_bus=args.v_dc_bus if args.v_dc_bus is not None else base.v_dc_bus,
            f_sw=args.f_sw if args.f_sw is not None else base.f_sw,
            i_ripple_dm=args.ripple_dm if args.ripple_dm is not None else base.i_ripple_dm,
            i_ripple_cm=args.ripple_cm if args.ripple_cm is not None else base.i_ripple_cm,
            attenuation_decades=args.attenuation if args.attenuation is not None else base.attenuation_decades,
        )
        import warnings

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", FilterDesignWarning)
            design = design_filter(spec)
        for wmsg in caught:
            _err(f"warning: {wmsg.message}")
    except (ValueError, ZeroDivisionError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    out = {"spec": spec.__dict__, "design": design.as_dict()}
    if args.json:
        print(json.dumps(out, indent=2))
    else:
        print(f"V_dc,bus = {spec.v_dc_bus:g} V, f_sw = {spec.f_sw:g} Hz, "
              f"ripple DM/CM = {spec.i_ripple_dm:g}/{spec.i_ripple_cm:g} A, A = {spec.attenuation_decades:g}")
        print(f"L_DM = {design.l_dm * 1e6:.3f} uH")
        print(f"L_CM = {design.l_cm * 1e3:.4f} mH")
        print(f"C_X  = {design.c_x * 1e6:.4f} uF  (f_c = {design.f_c:.2f} Hz)")
    return EXIT_OK


def cmd_envelope(args) -> int:
    try:
        v1 = Phasor(args.v1, 0.0)
        v2 = Phasor(args.v2 if args.v2 is not None else args.v1, -math.radians(args.dtheta))
        inside, env = operating_area(v1, v2, args.vdc)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    out = {
        "max_voltage_diff_V": env.max_voltage_diff,
        "max_angle_diff_deg": env.max_angle_diff_deg,
        "inside": inside,
        "decision": bypass_decision(v1, v2, args.vdc),
        "binding": binding_constraints(v1, v2, args.vdc),
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dipfc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one or more scenarios")
    r.add_argument("--scenario", action="append",
                   help=f"preset name ({', '.join(PRESETS)}) or TOML/JSON path; repeatable")
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="e.g. sim.t_end=0.4 or 'hardware.l_dm=\"120 uH\"'")
    r.add_argument("--seed", type=int, default=None, help="reserved; runs are deterministic")
    r.add_argument("--jobs", type=int, default=1, help="parallel workers for several scenarios")
    r.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("tune", help="resolve loop gains and report their margins")
    t.add_argument("--scenario", default="table1-scenario1")
    t.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out", default=None, help="write the JSON report here as well")
    t.add_argument("--seed", type=int, default=None, help="reserved")
    t.set_defaults(func=cmd_tune)

    f = sub.add_parser("filter", help="size the H-bridge chokes and X-capacitor")
    f.add_argument("--preset", choices=("table1", "table2"), default="table1")
    f.add_argument("--v-dc-bus", type=float)
    f.add_argument("--f-sw", type=float)
    f.add_argument("--ripple-dm", type=float, help="peak-to-peak DM ripple [A]")
    f.add_argument("--ripple-cm", type=float, help="peak-to-peak CM ripple [A]")
    f.add_argument("--attenuation", type=float, help="signed decades, f_c = 10**A f_sw")
    f.add_argument("--json", action="store_true")
    f.set_defaults(func=cmd_filter)

    e = sub.add_parser("envelope", help="operating-area check for a feeder pair")
    e.add_argument("--vdc", type=float, default=50.0, help="series dc-link voltage [V]")
    e.add_argument("--v1", type=float, default=400.0 / math.sqrt(3.0), help="feeder-1 phase RMS [V]")
    e.add_argument("--v2", type=float, default=None, help="feeder-2 phase RMS [V] (default V1)")
    e.add_argument("--dtheta", type=float, default=0.0, help="feeder-2 lag [deg]")
    e.set_defaults(func=cmd_envelope)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
