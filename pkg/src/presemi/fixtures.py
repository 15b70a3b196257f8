"""Closed-form test connections with oracle data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .connection import ConnectionField, MetricField
from .errors import SpecError
from .expr import parse

NAMES = ("flat2", "flat3", "sheared2", "polar2", "sphere2", "torsion2", "noneq2")


@dataclass(frozen=True)
class Fixture:
    """A connection plus whatever closed-form oracle data is known for it.

    ``transform(x')`` returns (f, jac, hess) for new-coordinate points of
    shape (m, n), valid on the box ``transform_domain``. ``geodesic(tau, x0,
    v0)`` returns positions and velocities, shape (len(tau), n) each.
    """
    name: str
    connection: ConnectionField
    metric: Optional[MetricField] = None
    transform: Optional[Callable] = None
    transform_domain: Optional[tuple] = None
    geodesic: Optional[Callable] = None
    symmetric: bool = True
    equiaffine: bool = True
    already_presemigeodesic: bool = False


def _zeros(n):
    return lambda X: np.zeros(X.shape[:-1] + (n, n, n))


def _identity_transform(n):
    def transform(Xp):
        m = len(Xp)
        return Xp.copy(), np.broadcast_to(np.eye(n), (m, n, n)).copy(), np.zeros((m, n, n, n))
    return transform


def _straight(tau, x0, v0):
    tau = np.asarray(tau, float)[:, None]
    return x0 + tau * v0, np.broadcast_to(v0, (tau.shape[0], len(v0))).copy()


def _sheared_gamma(X):
    out = np.zeros(X.shape[:-1] + (2, 2, 2))
    out[..., 1, 0, 0] = 1.0
    return out


def _sheared_transform(Xp):
    u, w = Xp[:, 0], Xp[:, 1]
    m = len(Xp)
    f = np.stack([u, w - 0.5 * u * u], axis=1)
    jac = np.zeros((m, 2, 2))
    jac[:, 0, 0] = 1.0
    jac[:, 1, 0] = -u
    jac[:, 1, 1] = 1.0
    hess = np.zeros((m, 2, 2, 2))
    hess[:, 1, 0, 0] = -1.0
    return f, jac, hess


def _sheared_geodesic(tau, x0, v0):
    # straight lines of X = u, Y = v + u^2/2 pulled back
    tau = np.asarray(tau, float)
    u0, w0 = x0
    a, b = v0
    X = u0 + a * tau
    Y = w0 + 0.5 * u0 * u0 + (b + u0 * a) * tau
    pos = np.stack([X, Y - 0.5 * X * X], axis=1)
    vel = np.stack([np.full_like(tau, a), (b + u0 * a) - X * a], axis=1)
    return pos, vel


def _polar_gamma(X):
    r = X[..., 0]
    out = np.zeros(X.shape[:-1] + (2, 2, 2))
    out[..., 0, 1, 1] = -r
    out[..., 1, 0, 1] = 1.0 / r
    out[..., 1, 1, 0] = 1.0 / r
    return out


def _polar_geodesic(tau, x0, v0):
    tau = np.asarray(tau, float)[:, None]
    r0, p0 = x0
    dr, dp = v0
    P = r0 * np.array([np.cos(p0), np.sin(p0)])
    V = dr * np.array([np.cos(p0), np.sin(p0)]) + r0 * dp * np.array([-np.sin(p0), np.cos(p0)])
    Q = P + tau * V
    r = np.hypot(Q[:, 0], Q[:, 1])
    phi = np.arctan2(Q[:, 1], Q[:, 0])
    rdot = (Q @ V) / r
    phidot = (Q[:, 0] * V[1] - Q[:, 1] * V[0]) / r ** 2
    return np.stack([r, phi], axis=1), np.stack([rdot, phidot], axis=1)


def _sphere_gamma(X):
    th = X[..., 0]
    out = np.zeros(X.shape[:-1] + (2, 2, 2))
    out[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
    cot = np.cos(th) / np.sin(th)
    out[..., 1, 0, 1] = cot
    out[..., 1, 1, 0] = cot
    return out


def _sphere_geodesic(tau, x0, v0):
    # great circle through the embedded point with the embedded velocity
    tau = np.asarray(tau, float)[:, None]
    th, ph = x0
    dth, dph = v0
    p = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    e_th = np.array([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])
    e_ph = np.array([-np.sin(ph), np.cos(ph), 0.0])
    v = dth * e_th + dph * np.sin(th) * e_ph
    s = np.linalg.norm(v)
    if s == 0:
        return np.broadcast_to(x0, (len(tau), 2)).copy(), np.zeros((len(tau), 2))
    pos = np.cos(s * tau) * p + np.sin(s * tau) * (v / s)
    vel = -s * np.sin(s * tau) * p + np.cos(s * tau) * v
    x, y, z = pos.T
    xd, yd, zd = vel.T
    theta = np.arccos(np.clip(z, -1, 1))
    phi = np.arctan2(y, x)
    thdot = -zd / np.sin(theta)
    phdot = (x * yd - y * xd) / (x * x + y * y)
    return np.stack([theta, phi], axis=1), np.stack([thdot, phdot], axis=1)


def _torsion_gamma(X):
    out = _sheared_gamma(X)
    out[..., 0, 0, 1] = 0.5
    out[..., 0, 1, 0] = -0.5
    return out


def _noneq_gamma(X):
    out = np.zeros(X.shape[:-1] + (2, 2, 2))
    out[..., 0, 0, 0] = X[..., 1]
    return out


def _noneq_transform(Xp):
    # x^1 = log(1 + c t)/c with c = x'^2, t = x'^1; series near c = 0
    t, c = Xp[:, 0], Xp[:, 1]
    m = len(Xp)
    q = 1.0 + c * t
    small = np.abs(c) < 1e-4
    cs = np.where(small, 1.0, c)
    L = np.where(small, t - c * t ** 2 / 2 + c ** 2 * t ** 3 / 3, np.log1p(cs * t) / cs)
    Lt = 1.0 / q
    Lc = np.where(small, -t ** 2 / 2 + 2 * c * t ** 3 / 3 - 3 * c ** 2 * t ** 4 / 4,
                  t / (cs * q) - np.log1p(cs * t) / cs ** 2)
    Ltt = -c / q ** 2
    Ltc = -t / q ** 2
    Lcc = np.where(small, 2 * t ** 3 / 3 - 3 * c * t ** 4 / 2,
                   -t * (1 + 2 * cs * t) / (cs ** 2 * q ** 2) - t / (cs ** 2 * q)
                   + 2 * np.log1p(cs * t) / cs ** 3)
    f = np.stack([L, c], axis=1)
    jac = np.zeros((m, 2, 2))
    jac[:, 0, 0], jac[:, 0, 1], jac[:, 1, 1] = Lt, Lc, 1.0
    hess = np.zeros((m, 2, 2, 2))
    hess[:, 0, 0, 0] = Ltt
    hess[:, 0, 0, 1] = hess[:, 0, 1, 0] = Ltc
    hess[:, 0, 1, 1] = Lcc
    return f, jac, hess


def _noneq_geodesic(tau, x0, v0):
    if v0[1] != 0:
        raise ValueError("closed form only for geodesics with constant x2")
    tau = np.asarray(tau, float)
    c, a = x0[1], v0[0]
    q = 1.0 + c * a * tau
    x1 = x0[0] + (np.log1p(c * a * tau) / c if c != 0 else a * tau)
    return (np.stack([x1, np.full_like(tau, c)], axis=1),
            np.stack([a / q, np.zeros_like(tau)], axis=1))


def _diag_metric(second, lo, hi):
    comps = {(0, 0): parse("1", 2), (1, 1): parse(second, 2)}
    return MetricField.from_expressions(2, comps, lo, hi, sign=1)


def builtin(name: str) -> Fixture:
    """One of ``NAMES``."""
    box2 = ([-1.0, -1.0], [1.0, 1.0])
    if name == "flat2" or name == "flat3":
        n = int(name[-1])
        lo, hi = [-1.0] * n, [1.0] * n
        conn = ConnectionField(n, _zeros(n), lo, hi, declared_symmetric=True, name=name)
        return Fixture(name, conn, transform=_identity_transform(n), transform_domain=(lo, hi),
                       geodesic=_straight, already_presemigeodesic=True)
    if name == "sheared2":
        conn = ConnectionField(2, _sheared_gamma, *box2, declared_symmetric=True, name=name)
        return Fixture(name, conn, transform=_sheared_transform,
                       transform_domain=([-0.5, -0.5], [0.5, 0.5]), geodesic=_sheared_geodesic)
    if name == "polar2":
        lo, hi = [0.5, -1.0], [2.0, 1.0]
        conn = ConnectionField(2, _polar_gamma, lo, hi, declared_symmetric=True, name=name)
        return Fixture(name, conn, metric=_diag_metric("x1^2", lo, hi),
                       transform=_identity_transform(2), transform_domain=(lo, hi),
                       geodesic=_polar_geodesic, already_presemigeodesic=True)
    if name == "sphere2":
        lo, hi = [0.5, -1.0], [2.5, 1.0]
        conn = ConnectionField(2, _sphere_gamma, lo, hi, declared_symmetric=True, name=name)
        return Fixture(name, conn, metric=_diag_metric("sin(x1)^2", lo, hi),
                       transform=_identity_transform(2), transform_domain=(lo, hi),
                       geodesic=_sphere_geodesic, already_presemigeodesic=True)
    if name == "torsion2":
        conn = ConnectionField(2, _torsion_gamma, *box2, declared_symmetric=False, name=name)
        return Fixture(name, conn, transform=_sheared_transform,
                       transform_domain=([-0.5, -0.5], [0.5, 0.5]), geodesic=_sheared_geodesic,
                       symmetric=False, equiaffine=False)
    if name == "noneq2":
        conn = ConnectionField(2, _noneq_gamma, *box2, declared_symmetric=True, name=name)
        return Fixture(name, conn, transform=_noneq_transform,
                       transform_domain=([-0.5, -0.9], [0.5, 0.9]), geodesic=_noneq_geodesic,
                       equiaffine=False)
    raise SpecError(f"unknown fixture {name!r}; choose from {', '.join(NAMES)}", name=name)
