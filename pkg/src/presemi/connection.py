"""Affine connections: storage, geodesic right-hand side, transformation law.

Index convention: ``gamma[..., h, i, j]`` is the component with upper index h
and lower indices i, j (0-based in arrays, 1-based in JSON documents).
Components are stored as given; symmetry is metadata plus a load-time check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import jsonschema
import numpy as np

from . import _kernels
from .errors import ConditioningError, ExprDomainError, ExprSyntaxError, SpecError
from .expr import ExprAst, compile_numpy, parse

COND_LIMIT = 1e8


def _coarse_points(lo, hi, per_axis=5):
    """Interior sample points of a box (endpoints excluded)."""
    axes = [np.linspace(a, b, per_axis + 2)[1:-1] for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def _as_batch(point, n):
    X = np.asarray(point, dtype=float)
    if X.shape[-1] != n:
        raise ValueError(f"expected points with {n} coordinates, got shape {X.shape}")
    return X


class ConnectionField:
    """The n^3 component functions of an affine connection over a box.

    ``evaluator`` maps points of shape (m, n) to an (m, n, n, n) array.
    Use :meth:`from_expressions` for text components.
    """

    def __init__(self, n: int, evaluator: Callable[[np.ndarray], np.ndarray],
                 lo, hi, declared_symmetric: bool = False, name: str = "",
                 components: Optional[dict] = None, metric: "MetricField | None" = None,
                 check: bool = True):
        if n < 2:
            raise SpecError(f"dimension must be >= 2, got {n}", dimension=n)
        self.n = int(n)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != (n,) or self.hi.shape != (n,) or np.any(self.hi <= self.lo):
            raise SpecError("domain must be n intervals with lo < hi", lo=list(self.lo), hi=list(self.hi))
        self._evaluator = evaluator
        self.declared_symmetric = bool(declared_symmetric)
        self.name = name
        self.components = components or {}
        self.metric = metric
        if check:
            self._validate()

    @classmethod
    def from_expressions(cls, n, components: dict, lo, hi, declared_symmetric=False,
                         name="", metric=None):
        """Build from ``{(h, i, j): ExprAst}`` with 0-based indices; missing entries are zero."""
        compiled = [(h, i, j, compile_numpy(ast)) for (h, i, j), ast in sorted(components.items())
                    if not ast.is_zero()]

        def evaluator(X):
            out = np.zeros(X.shape[:-1] + (n, n, n))
            for h, i, j, f in compiled:
                out[..., h, i, j] = f(X)
            return out

        return cls(n, evaluator, lo, hi, declared_symmetric, name=name,
                   components=dict(components), metric=metric)

    def _validate(self):
        pts = _coarse_points(self.lo, self.hi)
        g = self.gamma(pts)
        if self.declared_symmetric:
            asym = np.abs(g - np.swapaxes(g, -1, -2))
            if np.any(asym > 0):
                k = np.unravel_index(np.argmax(asym), asym.shape)
                raise SpecError("connection declared symmetric but components differ",
                                point=list(pts[k[0]]), component=[k[1] + 1, k[2] + 1, k[3] + 1],
                                difference=float(asym[k]))

    @property
    def extent(self):
        return self.hi - self.lo

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, points, tol=1e-12):
        X = _as_batch(points, self.n)
        slack = tol * self.extent
        with np.errstate(invalid="ignore"):
            return np.all((X >= self.lo - slack) & (X <= self.hi + slack), axis=-1)

    def gamma(self, points, strict: bool = True) -> np.ndarray:
        """Components at ``points`` (shape (n,) or (..., n)).

        With ``strict`` a non-finite component raises ExprDomainError;
        otherwise nan/inf are passed through for the caller to mask.
        """
        X = _as_batch(points, self.n)
        flat = X.reshape(-1, self.n)
        with np.errstate(all="ignore"):
            out = np.asarray(self._evaluator(flat), dtype=float)
        if strict and not np.all(np.isfinite(out)):
            k = np.argwhere(~np.isfinite(out))[0]
            raise ExprDomainError("connection component is not finite",
                                  point=list(flat[k[0]]), component=[int(k[1]) + 1, int(k[2]) + 1, int(k[3]) + 1])
        return out.reshape(X.shape[:-1] + (self.n,) * 3)

    def __repr__(self):
        return f"ConnectionField(name={self.name!r}, n={self.n})"


@dataclass(frozen=True)
class PhaseState:
    """A geodesic phase point (position, velocity)."""
    x: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))
        if self.x.shape != self.lam.shape or self.x.ndim != 1:
            raise ValueError("x and lam must be vectors of equal length")

    def as_vector(self):
        return np.concatenate([self.x, self.lam])

    @classmethod
    def from_vector(cls, y):
        n = len(y) // 2
        return cls(y[:n], y[n:])


class MetricField:
    """Metric components g_ij(x) over a box; used to build fixtures."""

    def __init__(self, n, evaluator, lo, hi, sign: int = 1, check: bool = True):
        self.n = int(n)
        self._evaluator = evaluator
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if sign not in (1, -1):
            raise SpecError("metric sign must be +1 or -1", sign=sign)
        self.sign = sign
        if check:
            pts = _coarse_points(self.lo, self.hi)
            g = self.g(pts)
            if np.any(np.abs(g - np.swapaxes(g, -1, -2)) > 1e-14 * (1 + np.abs(g))):
                raise SpecError("metric is not symmetric")
            if np.any(np.abs(np.linalg.det(g)) < 1e-14):
                raise SpecError("metric is singular at a sample point")

    @classmethod
    def from_expressions(cls, n, components: dict, lo, hi, sign=1):
        """``components`` maps 0-based (i, j) to ExprAst; (j, i) is filled by symmetry if absent."""
        full = dict(components)
        for (i, j), ast in components.items():
            full.setdefault((j, i), ast)
        compiled = [(i, j, compile_numpy(a)) for (i, j), a in sorted(full.items())]

        def evaluator(X):
            out = np.zeros(X.shape[:-1] + (n, n))
            for i, j, f in compiled:
                out[..., i, j] = f(X)
            return out

        return cls(n, evaluator, lo, hi, sign)

    def g(self, points):
        X = _as_batch(points, self.n)
        with np.errstate(all="ignore"):
            return np.asarray(self._evaluator(X), dtype=float)


def christoffel_from_metric(metric: MetricField, point) -> np.ndarray:
    """Levi-Civita connection of ``metric`` by central differences.

    Works on a single point (returns (n, n, n)) or a batch (..., n).
    Step per axis is 1e-5 times the domain extent.
    """
    n = metric.n
    X = _as_batch(point, n)
    single = X.ndim == 1
    X = X.reshape(-1, n)
    step = 1e-5 * (metric.hi - metric.lo)
    if np.any(X - step < metric.lo) or np.any(X + step > metric.hi):
        raise SpecError("point too close to the domain boundary for the difference stencil",
                        point=X.tolist())
    g = metric.g(X)
    dg = np.empty((X.shape[0], n, n, n))  # dg[m, k, i, j] = d_k g_ij
    for k in range(n):
        e = np.zeros(n)
        e[k] = step[k]
        dg[:, k] = (metric.g(X + e) - metric.g(X - e)) / (2 * step[k])
    # lowered[m, k, i, j] = 1/2 (d_i g_jk + d_j g_ik - d_k g_ij)
    lowered = 0.5 * (np.einsum("mijk->mkij", dg) + np.einsum("mjik->mkij", dg) - dg)
    if np.any(np.abs(np.linalg.det(g)) < 1e-14):
        raise ConditioningError("metric is singular at the requested point")
    out = np.linalg.solve(g, lowered.reshape(X.shape[0], n, n * n)).reshape(-1, n, n, n)
    return out[0] if single else out.reshape(np.shape(point)[:-1] + (n, n, n))


def geodesic_rhs(conn: ConnectionField, state: PhaseState):
    """(dx/dtau, dlam/dtau) = (lam, -Gamma(x)(lam, lam)), full double sum."""
    g = conn.gamma(state.x)
    acc = -_kernels.quadratic_form(g[None], state.lam[None])[0]
    return state.lam.copy(), acc


def geodesic_accel(conn: ConnectionField, x, v, strict=True):
    """Batched acceleration -Gamma(x)(v, v) for x, v of shape (m, n)."""
    return -_kernels.quadratic_form(conn.gamma(x, strict=strict), v)


def torsion_at(conn: ConnectionField, point) -> np.ndarray:
    g = conn.gamma(point)
    return g - np.swapaxes(g, -1, -2)


def invert_jacobian(jac):
    """Inverse of a batch of Jacobians via linear solve, with conditioning check.

    Returns (inverse, condition numbers). Raises ConditioningError when any
    condition number exceeds 1e8.
    """
    jac = np.asarray(jac, dtype=float)
    cond = np.linalg.cond(jac)
    bad = ~(cond < COND_LIMIT)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0].tolist()
        raise ConditioningError("Jacobian singular or ill-conditioned",
                                condition=float(np.atleast_1d(cond)[idx[0]]), node=idx)
    eye = np.broadcast_to(np.eye(jac.shape[-1]), jac.shape)
    return np.linalg.solve(jac, eye), cond


def transform_connection_at(conn: ConnectionField, old_point, jac, hess) -> np.ndarray:
    """Components in new coordinates x' at the point x = f(x').

    ``jac[a, i]`` = dx^a/dx'^i and ``hess[g, i, j]`` = d^2 x^g / dx'^i dx'^j.
    """
    n = conn.n
    jac = np.asarray(jac, dtype=float).reshape(n, n)
    hess = np.asarray(hess, dtype=float).reshape(n, n, n)
    jinv, _ = invert_jacobian(jac)
    g = conn.gamma(old_point)
    return _kernels.transform_law(g[None], jac[None], jinv[None], hess[None])[0]


# ---------------------------------------------------------- JSON documents

SPEC_SCHEMA = {
    "type": "object",
    "required": ["n", "domain"],
    "properties": {
        "n": {"type": "integer", "minimum": 2},
        "domain": {"type": "array", "items": {
            "type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
        "symmetric": {"type": "boolean"},
        "name": {"type": "string"},
        "gamma": {"type": "array", "items": {
            "type": "object", "required": ["h", "i", "j", "expr"],
            "properties": {"h": {"type": "integer", "minimum": 1},
                           "i": {"type": "integer", "minimum": 1},
                           "j": {"type": "integer", "minimum": 1},
                           "expr": {"type": "string"}}}},
        "metric": {"type": "array", "items": {
            "type": "object", "required": ["i", "j", "expr"],
            "properties": {"i": {"type": "integer", "minimum": 1},
                           "j": {"type": "integer", "minimum": 1},
                           "expr": {"type": "string"}}}},
        "sign": {"enum": [1, -1]},
    },
}


def _parse_component(text, n, index):
    try:
        return parse(text, n)
    except ExprSyntaxError as exc:
        raise SpecError(f"component {index}: {exc}", component=list(index),
                        offset=exc.offset, expr=text) from exc


def connection_from_spec(document) -> ConnectionField:
    """Load a connection from a JSON document (text or already-decoded dict).

    Unspecified components default to zero. If ``gamma`` is absent and a
    ``metric`` is given, the Levi-Civita connection of the metric is used.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid JSON: {exc}") from exc
    try:
        jsonschema.validate(document, SPEC_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SpecError(f"schema violation: {exc.message}", path=list(exc.absolute_path)) from None
    n = document["n"]
    domain = document["domain"]
    if len(domain) != n:
        raise SpecError(f"domain has {len(domain)} intervals, expected {n}")
    lo = [d[0] for d in domain]
    hi = [d[1] for d in domain]

    metric = None
    if "metric" in document:
        comps = {}
        for entry in document["metric"]:
            i, j = entry["i"], entry["j"]
            if max(i, j) > n:
                raise SpecError(f"metric index ({i},{j}) exceeds dimension {n}")
            comps[(i - 1, j - 1)] = _parse_component(entry["expr"], n, (i, j))
        metric = MetricField.from_expressions(n, comps, lo, hi, sign=document.get("sign", 1))

    symmetric = document.get("symmetric", False)
    name = document.get("name", "")
    if "gamma" not in document:
        if metric is None:
            raise SpecError("connection document needs 'gamma' or 'metric'")
        return ConnectionField(n, lambda X: christoffel_from_metric(metric, X), lo, hi,
                               declared_symmetric=document.get("symmetric", True), name=name, metric=metric)

    comps = {}
    for entry in document["gamma"]:
        h, i, j = entry["h"], entry["i"], entry["j"]
        if max(h, i, j) > n:
            raise SpecError(f"component index ({h},{i},{j}) exceeds dimension {n}",
                            component=[h, i, j])
        comps[(h - 1, i - 1, j - 1)] = _parse_component(entry["expr"], n, (h, i, j))
    return ConnectionField.from_expressions(n, comps, lo, hi, declared_symmetric=symmetric,
                                            name=name, metric=metric)

