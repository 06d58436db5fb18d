import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rccopf.grid import Bus, Generator, GridCase, Line, WindFarm
from rccopf.uncertainty import WindUncertainty

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def two_bus(beta=10.0, demand=100.0, cap=500.0):
    buses = (Bus(1, 0.0, True), Bus(2, demand))
    lines = (Line(1, 1, 2, beta, cap),)
    gens = (Generator(1, 1, 0.0, 300.0, 100.0, 100.0, c1=20.0, c2=0.01),)
    return GridCase(buses, lines, gens, name="two-bus")


def triangle(betas=(1.0, 2.0, 3.0), caps=(100.0, 100.0, 100.0)):
    """Lines (1,2), (2,3), (1,3)."""
    buses = (Bus(1, 0.0, True), Bus(2, 60.0), Bus(3, 40.0))
    lines = (
        Line(1, 1, 2, betas[0], caps[0]),
        Line(2, 2, 3, betas[1], caps[1]),
        Line(3, 1, 3, betas[2], caps[2]),
    )
    gens = (Generator(1, 1, 0.0, 200.0, 50.0, 50.0, c1=10.0, c2=0.02),)
    return GridCase(buses, lines, gens, name="triangle")


def symmetric_case(sigma2=25.0, wind=20.0, cap=1000.0):
    """Reference load bus 1 fed by two identical generators at buses 2 and 3."""
    buses = (Bus(1, 100.0, True), Bus(2, 0.0), Bus(3, 0.0))
    lines = (Line(1, 1, 2, 10.0, cap), Line(2, 1, 3, 10.0, cap))
    gens = (
        Generator(1, 2, 0.0, 200.0, 80.0, 80.0, c1=20.0, c2=0.05),
        Generator(2, 3, 0.0, 200.0, 80.0, 80.0, c1=20.0, c2=0.05),
    )
    winds = (WindFarm(1, wind),)
    u = WindUncertainty(np.array([sigma2]), np.array([2.0]), np.array([0.5 * sigma2]))
    return GridCase(buses, lines, gens, winds, name="symmetric"), u


@pytest.fixture
def sym():
    return symmetric_case()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
