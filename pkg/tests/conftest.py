import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedirl.gridworld import GridSpec, make_env, shared_lattice

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def open_5x5():
    return make_env(GridSpec(5, 5, (4, 4)))


@pytest.fixture
def client_5x5():
    spec = GridSpec(5, 5, (4, 4), frozenset({(1, 1), (2, 3), (3, 1)}), slip=0.05)
    return make_env(spec, shared_lattice(5, 5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
