import logging
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_LINES = []


@pytest.fixture
def report():
    """Record a one-line criterion verdict; all lines are echoed at the end."""
    def add(line):
        _LINES.append(line)
        print(line)
    return add


@pytest.fixture(autouse=True)
def _quiet_stabilizer():
    # flat synthetic backgrounds have no corners; the identity fallback is expected
    logging.getLogger("fmo.stabilize").setLevel(logging.ERROR)
    yield


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
