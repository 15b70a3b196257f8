import math

import numpy as np
import pytest

from presemi.connection import geodesic_rhs, PhaseState
from presemi.errors import IntegrationError
from presemi.fixtures import builtin
from presemi.ode import OdeProblem, integrate, rk4_step


def test_zero_field():
    traj = integrate(OdeProblem(lambda t, y: np.zeros(2), 0.0, [1.0, 2.0], 3.0, 0.1))
    assert np.all(traj.ys == [1.0, 2.0])
    assert traj.error_estimate == 0.0
    assert len(traj.ts) == 31 and traj.ts[-1] == pytest.approx(3.0)


def test_exponential():
    traj = integrate(OdeProblem(lambda t, y: y, 0.0, [1.0], 1.0, 1e-3))
    assert abs(traj.final[0] - math.e) < 1e-10
    assert 0 < traj.error_estimate < 1e-10


def test_sheared_geodesic():
    conn = builtin("sheared2").connection
    c = 0.3

    def rhs(t, y):
        dx, dl = geodesic_rhs(conn, PhaseState.from_vector(y))
        return np.concatenate([dx, dl])

    traj = integrate(OdeProblem(rhs, 0.0, [0.0, c, 1.0, 0.0], 1.0, 1e-2))
    np.testing.assert_allclose(traj.final, [1.0, c - 0.5, 1.0, -1.0], atol=1e-9)


def test_order_ratio():
    errs = []
    for h in (0.1, 0.05):
        traj = integrate(OdeProblem(lambda t, y: y, 0.0, [1.0], 1.0, h), estimate_error=False)
        errs.append(abs(traj.final[0] - math.e))
    assert 12 <= errs[0] / errs[1] <= 20


def test_determinism():
    prob = OdeProblem(lambda t, y: np.array([y[1], -np.sin(y[0])]), 0.0, [1.0, 0.0], 5.0, 0.01)
    a, b = integrate(prob), integrate(prob)
    assert np.array_equal(a.ys, b.ys) and a.error_estimate == b.error_estimate


def test_step_not_dividing_span():
    traj = integrate(OdeProblem(lambda t, y: y, 0.0, [1.0], 1.0, 0.3))
    assert traj.ts[-1] == pytest.approx(1.0)
    assert len(traj.ts) == 5


def test_halt_truncates():
    traj = integrate(OdeProblem(lambda t, y: np.ones(1), 0.0, [0.0], 1.0, 0.1),
                     halt=lambda t, y: y[0] > 0.45)
    assert traj.truncated
    assert traj.ys[-1][0] <= 0.45 and len(traj.ys) == 5


def test_rk4_step_exact_for_cubic():
    y = rk4_step(lambda t, y: np.array([3 * t * t]), 0.0, np.array([0.0]), 0.5)
    assert y[0] == pytest.approx(0.125, abs=1e-15)


def test_errors():
    with pytest.raises(ValueError):
        OdeProblem(lambda t, y: y, 0.0, [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        OdeProblem(lambda t, y: y, 1.0, [1.0], 0.0, 0.1)
    with pytest.raises(IntegrationError, match="guard"):
        OdeProblem(lambda t, y: y, 0.0, [1.0], 1.0, 1e-9)
    with pytest.raises(IntegrationError, match="non-finite"), np.errstate(over="ignore"):
        integrate(OdeProblem(lambda t, y: y * y, 0.0, [1.0], 2.0, 0.1))

    def broken(t, y):
        raise ZeroDivisionError("boom")

    with pytest.raises(IntegrationError, match="rhs evaluation failed"):
        integrate(OdeProblem(broken, 0.0, [1.0], 1.0, 0.1))
