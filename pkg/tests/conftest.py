import time

import pytest

from dipfc.engine import run
from dipfc.scenario import load_config

ACCEPTANCE_LINES = []
_RUNS = {}


def scenario_run(name: str):
    """Run a preset once per session; returns (series, summary, wall seconds)."""
    if name not in _RUNS:
        t0 = time.perf_counter()
        series, summary = run(load_config(name))
        _RUNS[name] = (series, summary, time.perf_counter() - t0)
    return _RUNS[name]


@pytest.fixture(scope="session")
def run_preset():
    return scenario_run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
