import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lpvff.feedforward import true_theta
from lpvff.plant import PlantParams
from lpvff.trajectory import MotionBounds, plan_fourth_order, scheduling_from_reference

settings.register_profile(
    "lpvff", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("lpvff")

BENCH_BOUNDS = MotionBounds(1.0, 2.0, 5.0, 32.5)


@pytest.fixture(scope="session")
def plant():
    return PlantParams()


@pytest.fixture(scope="session")
def bench_reference():
    bundle = plan_fourth_order(0.2, 0.8, BENCH_BOUNDS, 1e-3)
    return bundle, scheduling_from_reference(bundle)


@pytest.fixture(scope="session")
def bench_theta(plant):
    return true_theta(plant)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    """Store one acceptance line; all lines are printed in the terminal summary."""
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
