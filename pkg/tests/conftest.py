import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aeaka.crypto import SimClock, make_rng  # noqa: E402
from aeaka.sim.network import Network  # noqa: E402

PW = "correct horse"


def build_net(seed=0, **kw) -> Network:
    net = Network(seed, **kw)
    net.add_cs("CS1", ["storage"])
    net.add_es("ES1", ["CS1"], local=["video"])
    net.add_device("D1", "alice", "dev-1", PW, ["ES1"])
    return net


@pytest.fixture
def net():
    return build_net(seed=1)


@pytest.fixture
def clock():
    return SimClock(1_700_000_000)


@pytest.fixture
def rng():
    return make_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
