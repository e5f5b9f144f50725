"""Shared fixtures. Full-horizon runs take several seconds each, so every
expensive run is computed once per session and reused."""

from __future__ import annotations

import pytest

from socbal import cli
from socbal.scenario_io import load_preset
from socbal.simulation import run

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def example1():
    return load_preset("example1_case1_discharge")


@pytest.fixture(scope="session")
def example1_run(example1):
    return run(example1)


@pytest.fixture(scope="session")
def example1_charge_run():
    return run(load_preset("example1_case1_charge"))


@pytest.fixture(scope="session")
def balancing_run():
    return run(load_preset("balancing_fast"))


@pytest.fixture(scope="session")
def example1_cli_dirs(tmp_path_factory):
    """Two consecutive ``simulate`` invocations of the discharge preset."""
    dirs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"example1_cli_{k}")
        code = cli.main(["simulate", "example1_case1_discharge", "--out", str(out)])
        assert code == 0
        dirs.append(out)
    return dirs


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
