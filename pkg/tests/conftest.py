from pathlib import Path

import pytest

from cn2f_sim.scenarios import builtin_deployment, builtin_topology

DATA = Path(__file__).parent / "data"


@pytest.fixture
def topology():
    return builtin_topology()


@pytest.fixture
def core_docs():
    names = ["cassandra", "hss", "mme", "spgwc", "spgwu", "enb", "media-server", "ue1"]
    return [builtin_deployment(n) for n in names]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
