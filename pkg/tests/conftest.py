import numpy as np
import pytest

from macrodimer.model import PhysicalConfig
from macrodimer.potential import reference_well


@pytest.fixture(scope="session")
def config():
    return PhysicalConfig()


@pytest.fixture(scope="session")
def well(config):
    return reference_well(config)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
