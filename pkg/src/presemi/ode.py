"""Fixed-step classical Runge-Kutta integration with a step-halving error estimate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import IntegrationError

MAX_STEPS = 10_000_000


@dataclass(frozen=True)
class OdeProblem:
    rhs: Callable[[float, np.ndarray], np.ndarray]
    t0: float
    y0: np.ndarray
    t_end: float
    step: float

    def __post_init__(self):
        object.__setattr__(self, "y0", np.array(self.y0, dtype=float))
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if (self.t_end - self.t0) / self.step > MAX_STEPS:
            raise IntegrationError("step-count guard exceeded",
                                   steps=(self.t_end - self.t0) / self.step)

    def n_steps(self, refine=1):
        return refine * max(1, math.ceil((self.t_end - self.t0) / self.step - 1e-9))


@dataclass(frozen=True)
class Trajectory:
    ts: np.ndarray
    ys: np.ndarray
    error_estimate: float
    truncated: bool = False
    info: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.ys[-1]


def rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _march(problem, n_steps, halt):
    h = (problem.t_end - problem.t0) / n_steps
    ts = problem.t0 + h * np.arange(n_steps + 1)
    ys = np.empty((n_steps + 1,) + problem.y0.shape)
    ys[0] = problem.y0
    y = problem.y0
    for k in range(n_steps):
        try:
            y = rk4_step(problem.rhs, ts[k], y, h)
        except IntegrationError:
            raise
        except Exception as exc:
            raise IntegrationError(f"rhs evaluation failed: {exc}", step=k, t=float(ts[k])) from exc
        if halt is not None and halt(ts[k + 1], y):
            return ts[: k + 1], ys[: k + 1], True
        if not np.all(np.isfinite(y)):
            raise IntegrationError("non-finite state", step=k + 1, t=float(ts[k + 1]))
        ys[k + 1] = y
    return ts, ys, False


def integrate(problem: OdeProblem, *, estimate_error: bool = True,
              halt: Optional[Callable[[float, np.ndarray], bool]] = None) -> Trajectory:
    """Integrate with RK4 at the problem's fixed step, recording every step.

    ``error_estimate`` is the sup-norm difference against a re-run at half
    the step, compared on the shared samples. ``halt(t, y)`` returning True
    stops the march before ``y`` is recorded; the trajectory is then flagged
    ``truncated`` and holds only the samples before the halt.
    """
    n = problem.n_steps()
    ts, ys, truncated = _march(problem, n, halt)
    err = 0.0
    if estimate_error:
        _, fine, _ = _march(problem, 2 * n, halt)
        common = min(len(ys), (len(fine) + 1) // 2)
        if common:
            err = float(np.max(np.abs(fine[: 2 * common - 1: 2] - ys[:common]), initial=0.0))
    return Trajectory(ts, ys, err, truncated)
