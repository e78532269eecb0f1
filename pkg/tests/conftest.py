from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tmpc import backend
from tmpc.params import TireParams, VehicleParams
from tmpc.terrain import synth_terrain

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = sorted(backend.AVAILABLE)


@pytest.fixture
def vp():
    return VehicleParams()


@pytest.fixture
def tp():
    return TireParams()


@pytest.fixture(scope="session")
def flat():
    return synth_terrain("flat", origin_x=-20, origin_y=-20, width=80, length=40, resolution=0.25)


@pytest.fixture(scope="session")
def ridge():
    return synth_terrain("sine_ridge", amplitude=0.35, wavelength=4.0, angle=0.3, origin_x=-5, origin_y=-10,
                         width=40, length=20, resolution=0.1)


@pytest.fixture(scope="session")
def mild():
    return synth_terrain("sine_ridge", amplitude=0.12, wavelength=6.0, angle=0.3, origin_x=-5, origin_y=-10,
                         width=40, length=20, resolution=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one (number, passed, detail) entry per acceptance criterion that ran
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
