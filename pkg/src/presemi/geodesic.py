"""Geodesic congruences from a hypersurface and the sampled coordinate map they define.

A congruence shot from sigma: x^1 = phi(x~) in direction Lambda(x~) gives the
map f(tau, x~) = position at natural parameter tau on the geodesic labelled x~.
New coordinates are x' = (tau, x~); old coordinates are x = f(x').
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .connection import COND_LIMIT, ConnectionField, PhaseState, geodesic_accel
from .errors import ConstructionError, SeedError
from .expr import compile_numpy, parse
from .ode import OdeProblem, Trajectory, integrate, rk4_step

DET_LIMIT = 1e-8
DEFAULT_TAU = (-0.5, 0.5, 41)
DEFAULT_LABEL_COUNT = 21
LABEL_MARGIN = 0.1


# ------------------------------------------------------------------ grids

def uniform_tau(lo: float, hi: float, count: int) -> np.ndarray:
    """Uniform natural-parameter samples; a sample within rounding of 0 is snapped to 0."""
    tau = np.linspace(lo, hi, count)
    k = int(np.argmin(np.abs(tau)))
    if abs(tau[k]) < 1e-9 * max(1.0, hi - lo):
        tau[k] = 0.0
    return tau


def label_axes(lo: Sequence[float], hi: Sequence[float], count: int) -> tuple:
    return tuple(np.linspace(a, b, count) for a, b in zip(lo, hi))


def default_label_box(conn: ConnectionField):
    """Label axes 2..n of the domain, shrunk by 10% of the extent on each side."""
    lo, hi, ext = conn.lo[1:], conn.hi[1:], conn.extent[1:]
    return lo + LABEL_MARGIN * ext, hi - LABEL_MARGIN * ext


def _zero_index(tau):
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 1 or len(tau) < 2:
        raise ValueError("tau grid must be a 1-D array with at least two samples")
    d = np.diff(tau)
    if np.any(d <= 0) or np.ptp(d) > 1e-9 * d[0]:
        raise ValueError("tau grid must be uniform and increasing")
    hits = np.flatnonzero(tau == 0.0)
    if len(hits) != 1:
        raise ValueError("tau grid must contain 0 exactly")
    return int(hits[0]), float(d[0])


def _label_points(labels):
    mesh = np.meshgrid(*labels, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, len(labels))


# ------------------------------------------------------------------- seed

@dataclass(frozen=True)
class HypersurfaceSeed:
    """sigma: x^1 = phi(x~) and the initial direction Lambda(x~).

    ``phi`` maps labels of shape (m, n-1) to (m,); ``Lambda`` maps them
    to (m, n).
    """
    n: int
    phi: Callable[[np.ndarray], np.ndarray]
    Lambda: Callable[[np.ndarray], np.ndarray]
    tilde_lo: np.ndarray
    tilde_hi: np.ndarray
    description: str = ""

    @classmethod
    def from_expressions(cls, n, phi: str, Lambda: Sequence[str], tilde_lo, tilde_hi):
        """Seed from text in the label variables x2..xn (x1 is rejected)."""
        if len(Lambda) != n:
            raise SeedError(f"Lambda needs {n} components, got {len(Lambda)}")
        asts = [parse(phi, n)] + [parse(s, n) for s in Lambda]
        for text, ast in zip([phi, *Lambda], asts):
            if 1 in ast.variables():
                raise SeedError(f"seed expression {text!r} may only use x2..x{n}")
        fns = [compile_numpy(a) for a in asts]

        def full(Xt):
            return np.concatenate([np.zeros(Xt.shape[:-1] + (1,)), Xt], axis=-1)

        def phi_fn(Xt):
            return np.broadcast_to(fns[0](full(Xt)), Xt.shape[:-1]).copy()

        def lam_fn(Xt):
            X = full(Xt)
            return np.stack([np.broadcast_to(f(X), Xt.shape[:-1]) for f in fns[1:]], axis=-1)

        desc = f"phi={phi}; Lambda=({', '.join(Lambda)})"
        return cls(n, phi_fn, lam_fn, np.asarray(tilde_lo, float), np.asarray(tilde_hi, float), desc)

    @classmethod
    def constant(cls, n, phi_value: float, direction, tilde_lo, tilde_hi):
        direction = np.asarray(direction, dtype=float)

        def phi_fn(Xt):
            return np.full(Xt.shape[:-1], float(phi_value))

        def lam_fn(Xt):
            return np.broadcast_to(direction, Xt.shape[:-1] + (n,)).copy()

        return cls(n, phi_fn, lam_fn, np.asarray(tilde_lo, float), np.asarray(tilde_hi, float),
                   f"phi={phi_value!r}; Lambda={direction.tolist()}")

    @classmethod
    def default(cls, conn: ConnectionField, phi_value=None):
        """sigma at the middle of the first axis, Lambda = e_1."""
        lo, hi = default_label_box(conn)
        if phi_value is None:
            phi_value = float(conn.center[0])
        return cls.constant(conn.n, phi_value, np.eye(conn.n)[0], lo, hi)

    def start_points(self, Xt):
        return np.concatenate([self.phi(Xt)[:, None], Xt], axis=1)

    def transversality(self, Xt):
        """Lambda^1 - sum_i dphi/dx^i Lambda^i at labels Xt (central differences)."""
        step = 1e-6 * np.maximum(self.tilde_hi - self.tilde_lo, 1e-12)
        lam = self.Lambda(Xt)
        t = lam[:, 0].copy()
        for a in range(self.n - 1):
            e = np.zeros(self.n - 1)
            e[a] = step[a]
            dphi = (self.phi(Xt + e) - self.phi(Xt - e)) / (2 * step[a])
            t -= dphi * lam[:, a + 1]
        return t

    def validate(self, Xt):
        lam = self.Lambda(Xt)
        if not np.all(np.isfinite(lam)) or np.any(np.linalg.norm(lam, axis=1) == 0):
            raise SeedError("initial direction vanishes or is not finite at a label node")
        tr = self.transversality(Xt)
        bad = ~(np.abs(tr) > 1e-12)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise SeedError("initial direction is tangent to the hypersurface",
                            label=Xt[k].tolist(), transversality=float(tr[k]))


# ---------------------------------------------------------- transform grid

@dataclass
class TransformGrid:
    """The map x = f(x') sampled on x' = (tau, labels).

    Array layout: node axes (k, L_2, ..., L_n) followed by component axes.
    ``jac[..., a, i]`` = dx^a/dx'^i, ``hess[..., g, i, j]`` = d2 x^g/dx'^i dx'^j.
    """
    n: int
    tau: np.ndarray
    labels: tuple
    f: np.ndarray
    lam: np.ndarray
    jac: np.ndarray
    hess: np.ndarray
    regular: np.ndarray
    det: np.ndarray
    cond: np.ndarray
    route: str = ""
    history: list = field(default_factory=list)

    @property
    def node_shape(self):
        return self.regular.shape

    @property
    def dtau(self):
        return float(self.tau[1] - self.tau[0])

    def new_coords(self):
        mesh = np.meshgrid(self.tau, *self.labels, indexing="ij")
        return np.stack(mesh, axis=-1)

    def interior(self):
        """Regular nodes away from the first and last tau sample."""
        m = self.regular.copy()
        m[0] = False
        m[-1] = False
        return m


def _d1(a, axis, h):
    out = np.full_like(a, np.nan)
    src = np.moveaxis(a, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[1:-1] = (src[2:] - src[:-2]) / (2 * h)
    return out


def _d2(a, axis, h):
    out = np.full_like(a, np.nan)
    src = np.moveaxis(a, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[1:-1] = (src[2:] - 2 * src[1:-1] + src[:-2]) / (h * h)
    return out


def assemble_grid(n, tau, labels, f, lam, hess11, valid, route="") -> TransformGrid:
    """Derivative assembly shared by all construction routes.

    Column 1 of the Jacobian is the integrator velocity and hess(1,1) is
    supplied exactly by the caller; label columns and the remaining second
    derivatives are central differences across the label grid. Nodes without
    a full stencil, or failing the determinant/conditioning limits, are
    flagged irregular.
    """
    f = np.where(valid[..., None], f, np.nan)
    lam = np.where(valid[..., None], lam, np.nan)
    hess11 = np.where(valid[..., None], hess11, np.nan)
    shape = valid.shape
    jac = np.full(shape + (n, n), np.nan)
    hess = np.full(shape + (n, n, n), np.nan)
    jac[..., :, 0] = lam
    hess[..., :, 0, 0] = hess11
    steps = [float(ax[1] - ax[0]) for ax in labels]
    for a in range(n - 1):
        axis = 1 + a
        jac[..., :, axis] = _d1(f, axis, steps[a])
        mixed = _d1(lam, axis, steps[a])
        hess[..., :, 0, axis] = mixed
        hess[..., :, axis, 0] = mixed
        hess[..., :, axis, axis] = _d2(f, axis, steps[a])
    for a in range(n - 1):
        for b in range(a + 1, n - 1):
            cross = _d1(jac[..., :, 1 + a], 1 + b, steps[b])
            hess[..., :, 1 + a, 1 + b] = cross
            hess[..., :, 1 + b, 1 + a] = cross
    finite = (valid & np.all(np.isfinite(jac), axis=(-2, -1))
              & np.all(np.isfinite(hess), axis=(-3, -2, -1)))
    det = np.full(shape, np.nan)
    cond = np.full(shape, np.inf)
    if np.any(finite):
        det[finite] = np.linalg.det(jac[finite])
        cond[finite] = np.linalg.cond(jac[finite])
    with np.errstate(invalid="ignore"):
        regular = finite & (np.abs(det) > DET_LIMIT) & (cond < COND_LIMIT)
    return TransformGrid(n, np.asarray(tau, float), tuple(np.asarray(x, float) for x in labels),
                         f, lam, jac, hess, regular, det, cond, route)


def identity_grid(n, tau, labels) -> TransformGrid:
    """The trivial transform x = x' with exact derivatives (every node regular)."""
    tau = np.asarray(tau, float)
    labels = tuple(np.asarray(x, float) for x in labels)
    mesh = np.stack(np.meshgrid(tau, *labels, indexing="ij"), axis=-1)
    shape = mesh.shape[:-1]
    lam = np.broadcast_to(np.eye(n)[0], shape + (n,)).copy()
    jac = np.broadcast_to(np.eye(n), shape + (n, n)).copy()
    hess = np.zeros(shape + (n, n, n))
    return TransformGrid(n, tau, labels, mesh, lam, jac, hess, np.ones(shape, bool),
                         np.ones(shape), np.ones(shape), route="identity")


# --------------------------------------------------------------- shooting

def integrate_geodesic(conn: ConnectionField, init: PhaseState, tau_span, step: float = 1e-3,
                       estimate_error: bool = True) -> Trajectory:
    """Single geodesic starting at ``tau_span[0]``; truncated if it leaves the domain."""
    n = conn.n
    if not conn.contains(init.x):
        raise ConstructionError("initial point outside the domain", point=init.x.tolist())
    if not np.any(init.lam):
        raise ConstructionError("initial velocity is zero")

    def rhs(t, y):
        x, v = y[:n], y[n:]
        return np.concatenate([v, geodesic_accel(conn, x[None], v[None], strict=False)[0]])

    def outside(t, y):
        return not conn.contains(y[:n])

    problem = OdeProblem(rhs, tau_span[0], init.as_vector(), tau_span[1], step)
    traj = integrate(problem, estimate_error=estimate_error, halt=outside)
    if traj.truncated and len(traj.ts) == 1:
        raise ConstructionError("geodesic leaves the domain immediately", point=init.x.tolist())
    return traj


def march(rhs, inside, Y0, n_samples, dtau, oversample):
    """RK4 many first-order systems dy/dt = rhs(y) in lockstep (rows of Y0).

    Each output sample is ``oversample`` steps of size dtau/oversample.
    Rows that leave ``inside`` or go non-finite are frozen; ``last[m]`` is
    the last sample index at which row m was still valid (-1 if never).
    """
    h = dtau / oversample
    y = np.array(Y0, dtype=float)
    alive = inside(y) & np.all(np.isfinite(y), axis=1)
    ys = np.full((n_samples,) + y.shape, np.nan)
    ys[0] = y
    last = np.where(alive, 0, -1)
    step_rhs = lambda t, state: rhs(state)  # noqa: E731
    for s in range(1, n_samples):
        for _ in range(oversample):
            with np.errstate(all="ignore"):
                y_new = rk4_step(step_rhs, 0.0, y, h)
            alive = alive & np.all(np.isfinite(y_new), axis=1) & inside(y_new)
            y = np.where(alive[:, None], y_new, y)
        ys[s][alive] = y[alive]
        last[alive] = s
    return ys, last


def two_sided(run, tau, oversample):
    """Assemble samples on both sides of tau = 0.

    ``run(sign, count, dtau, oversample)`` must return positions, velocities
    (in the forward parametrisation) and ``last`` for a march of ``count``
    samples in direction ``sign``.
    """
    k0, dtau = _zero_index(tau)
    k = len(tau)
    xs, vs, last = run(1.0, k - k0, dtau, oversample)
    m, n = xs.shape[1:]
    f = np.full((k, m, n), np.nan)
    lam = np.full((k, m, n), np.nan)
    valid = np.zeros((k, m), bool)
    f[k0:], lam[k0:] = xs, vs
    valid[k0:] = np.arange(k - k0)[:, None] <= last[None, :]
    if k0 > 0:
        xs, vs, last = run(-1.0, k0 + 1, dtau, oversample)
        f[: k0 + 1] = xs[::-1]
        lam[: k0 + 1] = vs[::-1]
        valid[: k0 + 1] = (np.arange(k0 + 1)[:, None] <= last[None, :])[::-1]
    return f, lam, valid


def shoot_congruence(conn: ConnectionField, seed: HypersurfaceSeed, tau, labels,
                     oversample: int = 10) -> TransformGrid:
    """One natural-parameter geodesic per label node, sampled on ``tau``.

    The integrator step is the tau spacing divided by ``oversample`` so every
    trajectory lands on the output grid. Negative tau is reached by shooting
    with the reversed initial velocity. Geodesics that leave the domain mark
    their remaining nodes irregular; more than half failing is an error.
    """
    n = conn.n
    labels = tuple(np.asarray(x, float) for x in labels)
    if len(labels) != n - 1:
        raise ValueError(f"need {n - 1} label axes, got {len(labels)}")
    tau = np.asarray(tau, float)
    Xt = _label_points(labels)
    seed.validate(Xt)
    X0 = seed.start_points(Xt)
    V0 = seed.Lambda(Xt)

    def rhs(y):
        x, v = y[:, :n], y[:, n:]
        return np.concatenate([v, geodesic_accel(conn, x, v, strict=False)], axis=1)

    def inside(y):
        return conn.contains(y[:, :n])

    def run(sign, count, dtau, over):
        ys, last = march(rhs, inside, np.concatenate([X0, sign * V0], axis=1), count, dtau, over)
        return ys[..., :n], sign * ys[..., n:], last

    f, lam, valid = two_sided(run, tau, oversample)
    return finish_grid(conn, tau, labels, f, lam, valid, "shoot")


def exact_hess11(conn, f, lam, valid):
    """d2f/dtau2 = -Gamma(f)(lam, lam) from the geodesic equation, at valid nodes."""
    out = np.full(f.shape, np.nan)
    if np.any(valid):
        out[valid] = -_kernels.quadratic_form(conn.gamma(f[valid], strict=False), lam[valid])
    return out


def check_coverage(valid, route):
    frac = float(np.mean(valid))
    if frac < 0.5:
        raise ConstructionError("more than half of the nodes left the domain",
                                valid_fraction=frac, route=route)


def finish_grid(conn, tau, labels, f, lam, valid, route, hess11=None):
    """Reshape flat (k, m, n) samples onto the label grid and assemble derivatives."""
    n = conn.n
    check_coverage(valid, route)
    if hess11 is None:
        hess11 = exact_hess11(conn, f, lam, valid)
    shape = (len(tau),) + tuple(len(x) for x in labels)
    return assemble_grid(n, tau, labels, f.reshape(shape + (n,)), lam.reshape(shape + (n,)),
                         hess11.reshape(shape + (n,)), valid.reshape(shape), route)
