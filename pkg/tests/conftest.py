import numpy as np
import pytest

from presemi.fixtures import builtin
from presemi.geodesic import HypersurfaceSeed, default_label_box, label_axes, uniform_tau

TILT = 0.3


def default_grids(conn, tau=(-0.5, 0.5, 41), count=21):
    return uniform_tau(*tau), label_axes(*default_label_box(conn), count)


def tilted_sphere_seed(conn):
    """sigma: theta = pi/4 with initial direction (cos 0.3, sin 0.3)."""
    return HypersurfaceSeed.constant(2, np.pi / 4, [np.cos(TILT), np.sin(TILT)], *default_label_box(conn))


@pytest.fixture
def sheared():
    return builtin("sheared2")


@pytest.fixture
def sphere():
    return builtin("sphere2")


# one summary line per acceptance criterion, printed after the test session
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
