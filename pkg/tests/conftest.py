from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from poisson_change.calibration import CriticalValueStore
from poisson_change.process import EventSample

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def store() -> CriticalValueStore:
    return CriticalValueStore()


@pytest.fixture
def make_sample():
    def make(times, L: float = 100.0) -> EventSample:
        return EventSample(np.sort(np.asarray(times, dtype=float)), L)

    return make


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config) -> None:
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request) -> list:
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
