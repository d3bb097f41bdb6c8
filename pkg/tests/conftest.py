import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lecho.spin import SpinSystem, random_geometry

settings.register_profile(
    "default", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

# acceptance verdicts, filled in by test_acceptance.py and printed at the end
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def sys2():
    # pair perpendicular to the field, 0.3 nm apart
    return SpinSystem(np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]]))


@pytest.fixture(scope="session")
def sys4():
    return SpinSystem(random_geometry(4, seed=4))


@pytest.fixture(scope="session")
def sys6():
    return SpinSystem(random_geometry(6, seed=6))


@pytest.fixture(scope="session")
def sys8():
    return SpinSystem(random_geometry(8, seed=1))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
