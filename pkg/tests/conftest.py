import numpy as np
import pytest

from conerisk.models import model_a, model_b, model_c
from conerisk.pricing import sample_price_systems


@pytest.fixture(scope="session")
def mA():
    return model_a()


@pytest.fixture(scope="session")
def mB():
    return model_b()


@pytest.fixture(scope="session")
def mC():
    return model_c()


@pytest.fixture(scope="session")
def samples_c(mC):
    return sample_price_systems(mC, 16, 0)


@pytest.fixture(scope="session")
def samples_b(mB):
    return sample_price_systems(mB, 16, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
