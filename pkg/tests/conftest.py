import time

import pytest

from esc_lab.cli import preset, run_experiment

_RUNS = {}
ACCEPTANCE_LINES = []


def preset_result(name):
    """Run a preset once per test session; returns (RunResult, wall seconds)."""
    if name not in _RUNS:
        start = time.perf_counter()
        result = run_experiment(preset(name))
        _RUNS[name] = (result, time.perf_counter() - start)
    return _RUNS[name]


@pytest.fixture
def run_preset():
    return lambda name: preset_result(name)[0]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
