import numpy as np
import pytest

from sencache.field import GaussianField, GaussianMixtureField, StiffSyntheticField
from sencache.schedule import InterpolantSchedule


def standard_coefficient(t):
    """Velocity slope for N(0, I) data on the linear path, derived by hand."""
    return (2 * t - 1) / ((1 - t) ** 2 + t**2)


@pytest.fixture
def standard_field():
    return GaussianField.standard(2)


@pytest.fixture(params=["linear", "trig"])
def schedule(request):
    return InterpolantSchedule(request.param)


@pytest.fixture
def mixture_d8():
    rng = np.random.default_rng(3)
    return GaussianMixtureField(
        weights=[0.2, 0.5, 0.3],
        means=1.5 * rng.standard_normal((3, 8)),
        covariances=rng.uniform(0.3, 2.0, size=(3, 8)),
    )


@pytest.fixture
def stiff():
    return StiffSyntheticField(omega=12.0, amplitude=1.0, dim=4)


ACCEPTANCE_LINES = []


def record(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
