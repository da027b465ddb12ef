"""Result files: time-series CSV, summary JSON, echoed config, per-figure plot data and PNGs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .engine import MODE_NAMES, SummaryReport, TimeSeries

PHASES = ("a", "b", "c")


def _abc(name):
    return [f"{name}_{p}" for p in PHASES]


# panel id -> (title, channels, y label)
_LINE = ("line current", _abc("i_line"), "A")
_BUS = ("dc-bus voltage and current", ["v_bus", "i_bus"], "V / A")
_DCLINK = ("series-module dc-link voltage", _abc("v_dclink"), "V")

FIGURES = {
    "fig7": {
        "a": ("injected line current", _abc("i_line"), "A"),
        "b": _BUS,
        "c": _DCLINK,
        "d": ("DM current", _abc("i_dm"), "A"),
        "e": ("CM current", _abc("i_cm"), "A"),
    },
    "fig8": {"a": _LINE, "b": _BUS, "c": _DCLINK, "d": ("reactive power", ["q"], "var")},
    "fig9": {"a": _LINE, "b": _BUS, "c": _DCLINK, "d": ("active power", ["p"], "W")},
    "fig11": {"a": ("line current and feeder-2 voltage", ["i_line_a", "v2_a"], "A / V"),
              "b": ("active and reactive power", ["p", "q"], "W / var")},
    "fig12": {"a": ("line current and feeder-2 voltage", ["i_line_a", "v2_a"], "A / V"),
              "b": ("active and reactive power", ["p", "q"], "W / var")},
}


def _fmt(name: str, value: float) -> str:
    if name == "time":
        return format(value, ".9g")
    if math.isnan(value):
        return ""
    return repr(float(value))


def write_csv(path: Path, series: TimeSeries, names=None):
    names = list(names or series.names)
    cols = [np.asarray(series[n]) for n in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(names)
        for i in range(len(series)):
            w.writerow([_fmt(n, c[i]) for n, c in zip(names, cols)])


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_json(path: Path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(data), fh, indent=2)
        fh.write("\n")


def figure_groups(figure: str) -> dict:
    return FIGURES.get(figure, FIGURES["fig7"])


def plot_figure(path: Path, series: TimeSeries, figure: str, title: str = ""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = figure_groups(figure)
    fig, axes = plt.subplots(len(panels), 1, figsize=(7.0, 1.9 * len(panels)), sharex=True)
    axes = np.atleast_1d(axes)
    t = series.time
    for ax, (pid, (ptitle, chans, ylabel)) in zip(axes, panels.items()):
        units = [u.strip() for u in ylabel.split("/")]
        if len(chans) == 2 and len(units) == 2 and set(units) == {"V", "A"}:
            # volts and amps differ by orders of magnitude; second channel on its own axis
            ax.plot(t, series[chans[0]], lw=0.8, label=chans[0])
            ax.set_ylabel(f"{chans[0]} [{units[0]}]")
            tw = ax.twinx()
            tw.plot(t, series[chans[1]], lw=0.8, color="C1", label=chans[1])
            tw.set_ylabel(f"{chans[1]} [{units[1]}]")
            ax.set_title(f"({pid}) {ptitle}", fontsize=9, loc="left")
            ax.grid(alpha=0.3)
            continue
        for ch in chans:
            ax.plot(t, series[ch], lw=0.8, label=ch)
        ax.set_ylabel(ylabel)
        ax.set_title(f"({pid}) {ptitle}", fontsize=9, loc="left")
        ax.grid(alpha=0.3)
        if len(chans) > 1:
            ax.legend(fontsize=7, loc="upper left", ncol=len(chans))
    axes[-1].set_xlabel("time [s]")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def emit_results(series: TimeSeries, summary: SummaryReport, out_dir, resolved_config: dict | None = None,
                 figure: str = "fig7", plots: bool = True) -> dict:
    """Write every output file into ``out_dir``; returns a map of logical name to path."""
    figure = figure if figure in FIGURES else "fig7"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["timeseries"] = out / "timeseries.csv"
    write_csv(files["timeseries"], series)
    summ = summary.as_dict()
    summ["status"] = "diverged" if summary.diverged else "ok"
    summ["mode_codes"] = {str(k): v for k, v in MODE_NAMES.items()}
    files["summary"] = out / "summary.json"
    write_json(files["summary"], summ)
    if resolved_config is not None:
        files["config"] = out / "resolved_config.json"
        write_json(files["config"], resolved_config)
    pdir = out / "plotdata"
    pdir.mkdir(exist_ok=True)
    for pid, (_, chans, _) in figure_groups(figure).items():
        key = f"{figure}{pid}"
        files[key] = pdir / f"{key}.csv"
        write_csv(files[key], series, ["time", *chans])
    if plots and len(series):
        files["figure"] = out / f"{figure}.png"
        plot_figure(files["figure"], series, figure, summary.scenario)
    return files
