from __future__ import annotations

import pytest

from lasim.metrics import Shape
from lasim.scenarios import get_scenario, simulate

# 0-based event ids; a hop (s, r) means event r receives a message sent at event s
RELAY_CHAIN = Shape.from_hops(4, [(0, 1), (0, 2), (1, 3)])
FANOUT = Shape.from_hops(5, [(0, 1), (1, 2), (0, 3), (0, 4)])
NO_HOPS = Shape.from_hops(4, [])
ONE_HOLE = Shape.from_hops(5, [(0, 1), (2, 4)])
COVERED = Shape.from_hops(5, [(0, 1), (0, 2), (1, 3), (2, 4)])
LATE_WINDOW = Shape.from_hops(4, [(0, 2), (2, 3)])


@pytest.fixture(scope="session")
def fixture_traces():
    """Simulated broadcast traces for the scripted metric fixtures."""
    return {name: simulate(get_scenario(name)) for name in ("relay-chain", "broadcast-fanout", "late-window")}


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criteria lines collected by test_acceptance."""
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
