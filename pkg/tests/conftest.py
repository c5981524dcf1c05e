import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from smolkin.params import torus_params

settings.register_profile("ci", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_torus():
    return torus_params(200, 8.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.SUMMARY:
        terminalreporter.section("acceptance criteria")
        for line in mod.SUMMARY:
            terminalreporter.write_line(line)
