"""Coordinate maps by flow straightening and by successive (Picard) iteration,
plus numerical inversion of a sampled map."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .connection import ConnectionField
from .errors import ConstructionError, ConvergenceError, InversionError
from .expr import compile_numpy, parse
from .geodesic import (HypersurfaceSeed, TransformGrid, _label_points, _zero_index,
                       assemble_grid, check_coverage, exact_hess11, march, two_sided)


# ------------------------------------------------------------ vector fields

class VectorFieldGrid:
    """A vector field xi^h(x) on a box; ``xi`` maps (m, n) points to (m, n)."""

    def __init__(self, n, xi: Callable[[np.ndarray], np.ndarray], lo, hi, base_point=None):
        self.n = int(n)
        self._xi = xi
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.base_point = None if base_point is None else np.asarray(base_point, float)
        if self.base_point is not None and not np.any(self(self.base_point[None])[0]):
            raise ConstructionError("vector field vanishes at the base point",
                                    point=self.base_point.tolist())

    @classmethod
    def from_expressions(cls, n, components: Sequence[str], lo, hi, base_point=None):
        fns = [compile_numpy(parse(c, n)) for c in components]

        def xi(X):
            return np.stack([np.broadcast_to(f(X), X.shape[:-1]) for f in fns], axis=-1)

        return cls(n, xi, lo, hi, base_point)

    def __call__(self, X):
        with np.errstate(all="ignore"):
            return np.asarray(self._xi(np.asarray(X, float)), float)

    def contains(self, X, tol=1e-12):
        slack = tol * (self.hi - self.lo)
        return np.all((X >= self.lo - slack) & (X <= self.hi + slack), axis=-1)

    def directional_derivative(self, X, V):
        """(d xi/dx) V by a central difference along V."""
        scale = 1e-5 * float(np.max(self.hi - self.lo))
        norm = np.linalg.norm(V, axis=-1, keepdims=True)
        eps = scale / np.where(norm > 0, norm, 1.0)
        return (self(X + eps * V) - self(X - eps * V)) / (2 * eps)


def _default_phi0(n):
    def phi0(Xt):
        return np.concatenate([np.zeros((len(Xt), 1)), Xt], axis=1)
    return phi0


def _label_jacobian(fn, Xt, lo, hi):
    """d fn / d x~ by central differences; shape (m, n, n-1)."""
    step = 1e-6 * np.maximum(np.asarray(hi) - np.asarray(lo), 1e-12)
    cols = []
    for a in range(Xt.shape[1]):
        e = np.zeros(Xt.shape[1])
        e[a] = step[a]
        cols.append((fn(Xt + e) - fn(Xt - e)) / (2 * step[a]))
    return np.stack(cols, axis=-1)


def _check_initial_jacobian(first_col, phi, Xt, labels, what):
    lo = [ax[0] for ax in labels]
    hi = [ax[-1] for ax in labels]
    J = np.concatenate([first_col[:, :, None], _label_jacobian(phi, Xt, lo, hi)], axis=2)
    det = np.linalg.det(J)
    bad = ~(np.abs(det) > 1e-12)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise ConstructionError(f"{what}: Jacobian at tau = 0 is singular",
                                label=Xt[k].tolist(), det=float(det[k]))


def rectify_flow(field: VectorFieldGrid, init_phi, tau, labels, oversample: int = 10) -> TransformGrid:
    """Coordinates in which ``field`` becomes the first basis vector.

    Integrates dx/dt = xi(x) from x(0) = init_phi(x~) (None means (0, x~)).
    The Jacobian's first column is xi at each node; hess(1,1) is
    (d xi/dx) xi by differencing xi.
    """
    n = field.n
    labels = tuple(np.asarray(x, float) for x in labels)
    tau = np.asarray(tau, float)
    phi = init_phi if init_phi is not None else _default_phi0(n)
    Xt = _label_points(labels)
    X0 = phi(Xt)
    xi0 = field(X0)
    if not np.all(np.isfinite(xi0)) or np.any(np.linalg.norm(xi0, axis=1) == 0):
        k = int(np.argmin(np.linalg.norm(np.nan_to_num(xi0), axis=1)))
        raise ConstructionError("vector field vanishes at a starting point", point=X0[k].tolist())
    _check_initial_jacobian(xi0, phi, Xt, labels, "initial data")

    def run(sign, count, dtau, over):
        xs, last = march(lambda y: sign * field(y), field.contains, X0, count, dtau, over)
        vs = field(xs.reshape(-1, n)).reshape(xs.shape)
        return xs, vs, last

    f, lam, valid = two_sided(run, tau, oversample)
    check_coverage(valid, "flow")
    hess11 = np.full(f.shape, np.nan)
    hess11[valid] = field.directional_derivative(f[valid], lam[valid])
    shape = (len(tau),) + tuple(len(x) for x in labels)
    return assemble_grid(n, tau, labels, f.reshape(shape + (n,)), lam.reshape(shape + (n,)),
                         hess11.reshape(shape + (n,)), valid.reshape(shape), "flow")


# ------------------------------------------------------------------ picard

@dataclass
class PicardConfig:
    """Initial data f(0, x~) = phi0(x~), df/dtau(0, x~) = phi1(x~) and iteration controls."""
    phi0: Callable[[np.ndarray], np.ndarray]
    phi1: Callable[[np.ndarray], np.ndarray]
    tau: np.ndarray
    labels: tuple
    max_iterations: int = 60
    convergence_tol: float = 1e-12

    @classmethod
    def default(cls, n, tau, labels, **kw):
        """phi0 = (0, x~), phi1 = e_1."""
        e1 = np.eye(n)[0]
        return cls(_default_phi0(n), lambda Xt: np.broadcast_to(e1, (len(Xt), n)).copy(),
                   np.asarray(tau, float), tuple(labels), **kw)

    @classmethod
    def from_seed(cls, seed: HypersurfaceSeed, tau, labels, **kw):
        """Same initial data as shooting from ``seed``."""
        return cls(seed.start_points, seed.Lambda, np.asarray(tau, float), tuple(labels), **kw)


def _outward_valid(inside, k0):
    """A node is usable only if every node between it and tau = 0 is inside."""
    valid = np.zeros_like(inside)
    valid[k0:] = np.logical_and.accumulate(inside[k0:], axis=0)
    valid[: k0 + 1] = np.logical_and.accumulate(inside[k0::-1], axis=0)[::-1]
    return valid


def _signed_cumtrapz(values, k0, dtau):
    """Integral from tau = 0 to each sample of the tau grid (trapezoid rule)."""
    out = np.zeros_like(values)
    out[k0:] = _kernels.cumtrapz(values[k0:], dtau)
    if k0 > 0:
        out[: k0 + 1] = _kernels.cumtrapz(values[k0::-1], -dtau)[::-1]
    return out


def picard_solve(conn: ConnectionField, config: PicardConfig) -> TransformGrid:
    """Successive iteration for f'' = -Gamma(f)(f', f') with the given initial data.

    Starting from f_0 = lambda_0 = 0::

        f_{s+1}(t)      = phi0 + int_0^t lambda_s
        lambda_{s+1}(t) = phi1 - int_0^t Gamma(f_s)(lambda_s, lambda_s)

    with trapezoid quadrature on the output tau grid. Nodes whose iterate
    leaves the domain (and everything beyond them along tau) do not feed the
    integrals and end up irregular.
    """
    n = conn.n
    tau = np.asarray(config.tau, float)
    labels = tuple(np.asarray(x, float) for x in config.labels)
    k0, dtau = _zero_index(tau)
    Xt = _label_points(labels)
    P0 = np.asarray(config.phi0(Xt), float)
    P1 = np.asarray(config.phi1(Xt), float)
    _check_initial_jacobian(P1, config.phi0, Xt, labels, "Picard initial data")

    k, m = len(tau), len(Xt)
    F = np.zeros((k, m, n))
    L = np.zeros((k, m, n))
    valid = np.zeros((k, m), bool)
    history = []
    for it in range(1, config.max_iterations + 1):
        g = np.zeros((k, m, n))
        if np.any(valid):
            g[valid] = _kernels.quadratic_form(conn.gamma(F[valid], strict=False), L[valid])
        F_new = P0[None] + _signed_cumtrapz(L, k0, dtau)
        L_new = P1[None] - _signed_cumtrapz(g, k0, dtau)
        valid_new = _outward_valid(conn.contains(F_new), k0)
        with np.errstate(invalid="ignore"):
            ok = valid_new & np.all(np.isfinite(L_new), axis=-1)
        valid_new = _outward_valid(ok, k0)
        diff = (float(np.max(np.abs(F_new - F)[valid_new], initial=0.0))
                + float(np.max(np.abs(L_new - L)[valid_new], initial=0.0)))
        history.append(diff)
        F, L, valid = F_new, L_new, valid_new
        if diff < config.convergence_tol:
            break
    else:
        raise ConvergenceError(f"Picard iteration did not converge in {config.max_iterations} iterations",
                               history=history, last_diff=history[-1])
    check_coverage(valid, "picard")
    hess11 = exact_hess11(conn, F, L, valid)
    shape = (k,) + tuple(len(x) for x in labels)
    grid = assemble_grid(n, tau, labels, F.reshape(shape + (n,)), L.reshape(shape + (n,)),
                         hess11.reshape(shape + (n,)), valid.reshape(shape), "picard")
    grid.history = history
    return grid


def contraction_ratios(history):
    """Successive-difference ratios d_s / d_{s-1}, indexed by iteration s >= 2."""
    return {s + 1: history[s] / history[s - 1] for s in range(1, len(history)) if history[s - 1] > 0}


# --------------------------------------------------------------- inversion

def _hermite(p0, p1, m0, m1, s, h):
    s2, s3 = s * s, s * s * s
    return ((2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * h * m0
            + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * h * m1)


class GridInterpolator:
    """Evaluate a TransformGrid between nodes.

    Along tau, f is cubic Hermite (using the stored velocity); across labels
    it is linear. The Jacobian is interpolated multilinearly.
    """

    def __init__(self, grid: TransformGrid):
        self.grid = grid
        self.axes = (grid.tau,) + grid.labels
        self.lo = np.array([ax[0] for ax in self.axes])
        self.hi = np.array([ax[-1] for ax in self.axes])
        self.steps = np.array([ax[1] - ax[0] for ax in self.axes])
        self.corners = list(itertools.product((0, 1), repeat=grid.n))
        reg = grid.jac[grid.regular]
        # old-coordinate size of one grid cell, bounding nearest-node distance for image points
        self.cell_diameter = float(np.max(np.abs(reg) @ self.steps, initial=0.0)) if len(reg) else 0.0

    def inside(self, xp, tol=1e-12):
        slack = tol * (self.hi - self.lo)
        return bool(np.all(xp >= self.lo - slack) and np.all(xp <= self.hi + slack))

    def _cell_regular(self, idx):
        return all(self.grid.regular[tuple(idx + np.array(c))] for c in self.corners)

    def _cell(self, xp, face_tol=1e-9):
        """Cell index and local coordinates of xp.

        A point on (or within rounding of) a face shared by two cells is
        assigned to whichever of them has only regular corners.
        """
        sizes = np.array([len(ax) for ax in self.axes])
        idx = np.clip(np.floor((xp - self.lo) / self.steps).astype(int), 0, sizes - 2)
        u = (xp - (self.lo + idx * self.steps)) / self.steps
        if not self._cell_regular(idx):
            options = [(-1, 0) if ui < face_tol else (0, 1) if ui > 1 - face_tol else (0,) for ui in u]
            for shift in itertools.product(*options):
                cand = idx + np.array(shift)
                if np.any(cand < 0) or np.any(cand > sizes - 2) or not self._cell_regular(cand):
                    continue
                idx = cand
                u = (xp - (self.lo + idx * self.steps)) / self.steps
                break
        return idx, np.clip(u, 0.0, 1.0)

    def __call__(self, xp):
        """Return (f(xp), jac(xp))."""
        g = self.grid
        xp = np.asarray(xp, float)
        if not self.inside(xp):
            raise InversionError("point outside the parameter grid", new_point=xp.tolist())
        idx, u = self._cell(xp)
        f = np.zeros(g.n)
        jac = np.zeros((g.n, g.n))
        for c in self.corners:
            w = np.prod([ui if ci else 1 - ui for ui, ci in zip(u, c)])
            if w == 0.0:
                continue
            node = tuple(idx + np.array(c))
            if not g.regular[node]:
                raise InversionError("interpolation touches an irregular cell", node=list(node))
            jac += w * g.jac[node]
        for c in self.corners[: 2 ** (g.n - 1)]:
            lab = c[1:]
            w = np.prod([ui if ci else 1 - ui for ui, ci in zip(u[1:], lab)])
            if w == 0.0:
                continue
            i0 = (idx[0],) + tuple(idx[1:] + np.array(lab, dtype=int))
            i1 = (idx[0] + 1,) + i0[1:]
            f += w * _hermite(g.f[i0], g.f[i1], g.lam[i0], g.lam[i1], u[0], self.steps[0])
        return f, jac


def invert_transform(grid: TransformGrid, old_point, tol: float = 1e-10, max_iter: int = 50,
                     guess=None, interpolator: Optional[GridInterpolator] = None):
    """New coordinates x' with f(x') = old_point, by Newton iteration."""
    p = np.asarray(old_point, float)
    interp = interpolator or GridInterpolator(grid)
    if guess is None:
        diff = np.linalg.norm(grid.f - p, axis=-1)
        diff = np.where(grid.regular, diff, np.inf)
        if not np.isfinite(diff).any():
            raise InversionError("grid has no regular nodes")
        node = np.unravel_index(np.argmin(diff), diff.shape)
        if diff[node] > interp.cell_diameter:
            raise InversionError("point outside the image of the grid", old_point=p.tolist(),
                                 distance=float(diff[node]))
        xp = grid.new_coords()[node]
    else:
        xp = np.array(guess, float)
    res = np.inf
    for _ in range(max_iter):
        f, jac = interp(xp)
        r = f - p
        res = float(np.max(np.abs(r)))
        if res < tol:
            return xp
        xp = xp - np.linalg.solve(jac, r)
        if not interp.inside(xp):
            clipped = np.clip(xp, interp.lo, interp.hi)
            f_c, _ = interp(clipped)
            if np.max(np.abs(f_c - p)) > 10 * res:
                raise InversionError("point outside the image of the grid",
                                     old_point=p.tolist(), residual=res)
            xp = clipped
    raise InversionError("Newton iteration did not converge", old_point=p.tolist(), residual=res)


# ------------------------------------------------------- first integrals

@dataclass
class FirstIntegralResiduals:
    points: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    failures: int

    @property
    def max_r0(self):
        return float(np.max(self.r0, initial=0.0))

    @property
    def max_r1(self):
        return float(np.max(self.r1, initial=0.0))


def _deep_nodes(grid):
    """Regular nodes whose +-1 neighbours along every axis are regular too."""
    reg = grid.regular
    deep = reg.copy()
    for axis in range(reg.ndim):
        r = np.moveaxis(reg, axis, 0)
        d = np.moveaxis(deep, axis, 0)
        d[0] = False
        d[-1] = False
        d[1:-1] &= r[2:] & r[:-2]
    return deep


def first_integral_residuals(grid: TransformGrid, field: VectorFieldGrid, fd_step: float = 1e-4,
                             max_points: int = 200) -> FirstIntegralResiduals:
    """Check that the new coordinates solve xi.d f^i = 0 (i > 1) and xi.d f^1 = 1.

    The new-coordinate functions are obtained by inverting the grid at
    old-coordinate points and differenced centrally in old coordinates.
    """
    n = grid.n
    deep = np.argwhere(_deep_nodes(grid))
    if len(deep) == 0:
        raise InversionError("no interior regular nodes to sample")
    stride = max(1, len(deep) // max_points)
    deep = deep[::stride]
    interp = GridInterpolator(grid)
    coords = grid.new_coords()
    pts, r0, r1 = [], [], []
    failures = 0
    for node in map(tuple, deep):
        p = grid.f[node]
        guess = coords[node]
        try:
            grad = np.empty((n, n))  # grad[h, a] = d x'^h / d x^a
            for a in range(n):
                e = np.zeros(n)
                e[a] = fd_step
                plus = invert_transform(grid, p + e, tol=1e-13, guess=guess, interpolator=interp)
                minus = invert_transform(grid, p - e, tol=1e-13, guess=guess, interpolator=interp)
                grad[:, a] = (plus - minus) / (2 * fd_step)
        except InversionError:
            failures += 1
            continue
        push = grad @ field(p[None])[0]
        pts.append(p)
        r0.append(float(np.max(np.abs(push[1:]))))
        r1.append(abs(push[0] - 1.0))
    if failures > 0.1 * len(deep):
        raise InversionError("inversion failed at more than 10% of sample points",
                             failures=failures, samples=len(deep))
    return FirstIntegralResiduals(np.array(pts), np.array(r0), np.array(r1), failures)


def pushforward_residual(grid: TransformGrid, field: VectorFieldGrid) -> float:
    """max over regular nodes of |jac^-1 xi(f) - e_1|."""
    reg = grid.regular
    J = grid.jac[reg]
    xi = field(grid.f[reg])
    push = np.linalg.solve(J, xi[..., None])[..., 0]
    push[:, 0] -= 1.0
    return float(np.max(np.abs(push), initial=0.0))
