"""Checks on a constructed chart: Gamma'^h_11 residual, straight coordinate
lines, geodesic correspondence, torsion tensoriality, equiaffinity and
degree-of-freedom counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .connection import ConnectionField, _coarse_points, invert_jacobian
from .errors import VerificationError
from .geodesic import TransformGrid, march


@dataclass
class TransformedConnection:
    tau: np.ndarray
    labels: tuple
    gamma_prime: np.ndarray      # (k, *L, n, n, n), nan where irregular
    residual_gamma11: np.ndarray  # (k, *L), max_h |Gamma'^h_11|
    regular: np.ndarray
    interior: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.gamma_prime.shape[-1]


def evaluate_transformed(conn: ConnectionField, grid: TransformGrid) -> TransformedConnection:
    """Apply the transformation law at every regular node of ``grid``."""
    reg = grid.regular
    if not np.any(reg):
        raise VerificationError("every node of the grid is irregular", route=grid.route)
    n = grid.n
    jac = grid.jac[reg]
    jinv, _ = invert_jacobian(jac)
    gp = _kernels.transform_law(conn.gamma(grid.f[reg]), jac, jinv, grid.hess[reg])
    full = np.full(reg.shape + (n, n, n), np.nan)
    full[reg] = gp
    resid = np.full(reg.shape, np.nan)
    resid[reg] = np.max(np.abs(gp[:, :, 0, 0]), axis=1)
    interior = grid.interior()
    vals = resid[interior] if np.any(interior) else resid[reg]
    stats = {"max": float(np.max(vals)), "mean": float(np.mean(vals)), "nodes": int(vals.size)}
    return TransformedConnection(grid.tau, grid.labels, full, resid, reg.copy(), interior, stats)


class GammaPrimeInterpolant:
    """Multilinear interpolation of Gamma' over the new-coordinate grid."""

    def __init__(self, tc: TransformedConnection):
        self.tc = tc
        self.axes = (tc.tau,) + tuple(tc.labels)
        self.lo = np.array([a[0] for a in self.axes])
        self.hi = np.array([a[-1] for a in self.axes])
        self.steps = np.array([a[1] - a[0] for a in self.axes])
        self.sizes = np.array([len(a) for a in self.axes], dtype=np.int64)
        n = tc.n
        self.table = np.ascontiguousarray(tc.gamma_prime.reshape(-1, n ** 3))

    def inside(self, X, tol=1e-12):
        slack = tol * (self.hi - self.lo)
        return np.all((X >= self.lo - slack) & (X <= self.hi + slack), axis=-1)

    def __call__(self, X, strict=True):
        X = np.atleast_2d(np.asarray(X, float))
        n = self.tc.n
        ins = self.inside(X)
        if strict and not np.all(ins):
            raise VerificationError("interpolation point outside the grid",
                                    point=X[~ins][0].tolist())
        out, bad = _kernels.multilinear(self.table, self.lo, self.steps, self.sizes, X)
        bad |= ~ins
        if strict and np.any(bad):
            raise VerificationError("interpolation touches an irregular node",
                                    point=X[bad][0].tolist())
        out[bad] = np.nan
        return out.reshape(len(X), n, n, n)


def _good_lines(tc, rows):
    """Label nodes whose neighbourhood (one node each way in every label axis) is regular on ``rows``."""
    reg = tc.regular[rows]
    ok = np.all(reg, axis=0)
    good = ok.copy()
    for axis in range(ok.ndim):
        o = np.moveaxis(ok, axis, 0)
        g = np.moveaxis(good, axis, 0)
        g[0] = False
        g[-1] = False
        g[1:-1] &= o[2:] & o[:-2]
    idx = np.argwhere(good)
    return np.array([[tc.labels[a][i[a]] for a in range(len(tc.labels))] for i in idx])


def check_straight_geodesics(tc: TransformedConnection, interpolant=None, sample_lines=None,
                             tau_span=None, oversample: int = 10) -> float:
    """Max deviation of Gamma'-geodesics from the coordinate lines (tau, x~).

    Geodesics start at (0, x~) with velocity e_1 and are integrated both ways
    over ``tau_span``. By default every label line that is regular next to
    tau = 0 is sampled. A trajectory that leaves the grid or reaches an
    irregular cell stops there; its deviation up to that point still counts.
    """
    interp = interpolant or GammaPrimeInterpolant(tc)
    n = tc.n
    tau = tc.tau
    lo, hi = tau_span if tau_span is not None else (tau[0], tau[-1])
    span = (tau >= lo - 1e-12) & (tau <= hi + 1e-12)
    ts = tau[span]
    if sample_lines is None:
        k0 = int(np.argmin(np.abs(tau)))
        near = np.zeros(len(tau), bool)
        near[max(k0 - 1, 0): k0 + 2] = True
        sample_lines = _good_lines(tc, near & span)
    lines = np.atleast_2d(np.asarray(sample_lines, float))
    if lines.size == 0:
        raise VerificationError("no label line is regular next to tau = 0")
    X0 = np.concatenate([np.zeros((len(lines), 1)), lines], axis=1)
    if not np.all(interp.inside(X0)):
        raise VerificationError("sample line starts outside the grid")
    V0 = np.broadcast_to(np.eye(n)[0], X0.shape).copy()
    dtau = float(tau[1] - tau[0])

    def rhs(y):
        x, v = y[:, :n], y[:, n:]
        return np.concatenate([v, -_kernels.quadratic_form(interp(x, strict=False), v)], axis=1)

    def inside(y):
        return interp.inside(y[:, :n])

    worst = 0.0
    k0 = int(np.argmin(np.abs(ts)))
    for sign, count in ((1.0, len(ts) - k0), (-1.0, k0 + 1)):
        if count < 2:
            continue
        ys, last = march(rhs, inside, np.concatenate([X0, sign * V0], axis=1), count, dtau, oversample)
        steps = np.arange(count)[:, None]
        straight = X0[None] + sign * dtau * steps[..., None] * V0[None]
        dev = np.max(np.abs(ys[..., :n] - straight), axis=-1)
        dev = np.where(steps <= last[None, :], dev, 0.0)
        worst = max(worst, float(np.max(dev)))
    return worst


def check_geodesic_correspondence(conn: ConnectionField, grid: TransformGrid) -> float:
    """max |d2f/dtau2 + Gamma(f)(lam, lam)| with the second derivative from second differences of f."""
    h = grid.dtau
    f = grid.f
    d2 = np.full(f.shape, np.nan)
    d2[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / (h * h)
    mask = grid.interior() & np.all(np.isfinite(d2), axis=-1)
    if not np.any(mask):
        return 0.0
    acc = _kernels.quadratic_form(conn.gamma(f[mask]), grid.lam[mask])
    return float(np.max(np.abs(d2[mask] + acc)))


def torsion_tensoriality_residual(conn: ConnectionField, grid: TransformGrid,
                                  tc: TransformedConnection) -> float:
    """max |T'(node) - pushforward of T(f(node))| over regular nodes."""
    if tc.regular.shape != grid.regular.shape or not np.array_equal(tc.regular, grid.regular):
        raise VerificationError("transformed connection is not aligned with the grid")
    reg = grid.regular
    gp = tc.gamma_prime[reg]
    t_new = gp - np.swapaxes(gp, -1, -2)
    g = conn.gamma(grid.f[reg])
    t_old = g - np.swapaxes(g, -1, -2)
    jac = grid.jac[reg]
    jinv, _ = invert_jacobian(jac)
    pushed = _kernels.transform_law(t_old, jac, jinv, np.zeros_like(t_old))
    return float(np.max(np.abs(t_new - pushed), initial=0.0))


def trace_field(conn: ConnectionField, X):
    """t_i(x) = Gamma^a_{i a}(x)."""
    return np.einsum("...aia->...i", conn.gamma(X))


def equiaffine_check(conn: ConnectionField, sample_points=None, fd_step: float = 1e-4):
    """(flag, residual): is the trace Gamma^a_{ia} curl-free on the samples?

    ``fd_step`` is relative to the domain extent per axis. Raises for a
    connection with torsion, where equiaffinity is not defined here.
    """
    n = conn.n
    X = _coarse_points(conn.lo, conn.hi) if sample_points is None else np.atleast_2d(sample_points)
    g = conn.gamma(X)
    torsion = float(np.max(np.abs(g - np.swapaxes(g, -1, -2))))
    if torsion > 0:
        raise VerificationError("equiaffine check needs a symmetric connection", torsion=torsion)
    steps = fd_step * conn.extent
    grads = np.empty((len(X), n, n))  # grads[m, i, j] = d_j t_i
    for j in range(n):
        e = np.zeros(n)
        e[j] = steps[j]
        grads[:, :, j] = (trace_field(conn, X + e) - trace_field(conn, X - e)) / (2 * steps[j])
    curl = grads - np.swapaxes(grads, 1, 2)
    residual = float(np.max(np.abs(curl), initial=0.0))
    return residual < 1e-6, residual


@dataclass(frozen=True)
class DofReport:
    n: int
    general_count: int
    torsion_free_count: int
    presemigeodesic_general: int
    presemigeodesic_torsion_free: int
    equiaffine_reduction: int
    applicable: int


def dof_report(n: int, torsion_free: bool = False, equiaffine: bool = False) -> DofReport:
    """Counts of arbitrary functions of n variables determining a connection."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if equiaffine and not torsion_free:
        raise ValueError("equiaffine connections are torsion-free by definition")
    pg = n * (n * n - 1)
    ptf = n * (n - 1) ** 2 // 2
    applicable = ptf if torsion_free else pg
    if equiaffine:
        applicable -= n - 1
    return DofReport(n, n ** 3, n * n * (n + 1) // 2, pg, ptf, n - 1, applicable)


# ----------------------------------------------------------------- report

@dataclass(frozen=True)
class Tolerances:
    gamma11_max: float = 1e-3
    gamma11_mean: float = 1e-4
    straight: float = 1e-3
    correspondence: float = 1e-4
    torsion: float = 1e-6
    route_agreement: float = 1e-5


def _check(value, tol):
    return {"value": float(value), "tolerance": float(tol), "pass": bool(value < tol)}


def verify_grid(conn: ConnectionField, grid: TransformGrid, tol: Tolerances = Tolerances()):
    """Full check suite for one constructed grid; returns (report dict, TransformedConnection)."""
    tc = evaluate_transformed(conn, grid)
    checks = {
        "gamma11_max": _check(tc.stats["max"], tol.gamma11_max),
        "gamma11_mean": _check(tc.stats["mean"], tol.gamma11_mean),
        "straight_geodesics": _check(check_straight_geodesics(tc), tol.straight),
        "correspondence": _check(check_geodesic_correspondence(conn, grid), tol.correspondence),
        "torsion_tensoriality": _check(torsion_tensoriality_residual(conn, grid, tc), tol.torsion),
    }
    report = {
        "route": grid.route,
        "nodes": int(grid.regular.size),
        "regular_nodes": int(np.count_nonzero(grid.regular)),
        "checks": checks,
    }
    return report, tc


def route_agreement(a: TransformGrid, b: TransformGrid) -> float:
    both = a.regular & b.regular
    if not np.any(both):
        raise VerificationError("routes share no regular nodes")
    return float(np.max(np.abs(a.f[both] - b.f[both])))
