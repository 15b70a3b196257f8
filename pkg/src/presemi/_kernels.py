"""Hot inner loops, compiled with numba when available.

Set ``PRESEMI_DISABLE_NUMBA=1`` to force the pure-numpy path. Both paths are
always importable as ``*_numba`` / ``*_numpy`` so they can be compared
directly; the unsuffixed names are the active selection.
"""

import os

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("PRESEMI_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# ------------------------------------------------------------- numpy path

def quadratic_form_numpy(gamma, v):
    """out[m, h] = sum_ab gamma[m, h, a, b] v[m, a] v[m, b]."""
    return np.einsum("mhab,ma,mb->mh", gamma, v, v)


def transform_law_numpy(gamma, jac, jinv, hess):
    """Connection transformation law at a batch of nodes.

    out[m,h,i,j] = jinv[m,h,g] * (gamma[m,g,a,b] jac[m,a,i] jac[m,b,j] + hess[m,g,i,j])
    """
    inner = np.einsum("mgab,mai,mbj->mgij", gamma, jac, jac) + hess
    return np.einsum("mhg,mgij->mhij", jinv, inner)


def cumtrapz_numpy(values, dt):
    """Cumulative trapezoid along axis 0, starting at 0 (shape (k, m))."""
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]), axis=0)
    return out


# points within this many cell widths of a node are treated as lying on it
NODE_SNAP = 1e-10


def _corner_table(d):
    return np.array([[(c >> (d - 1 - a)) & 1 for a in range(d)] for c in range(2 ** d)], dtype=np.int64)


def multilinear_numpy(table, lo, steps, sizes, X):
    """Multilinear interpolation of node values on a uniform grid.

    ``table`` is (prod(sizes), C), nodes in C order. Points are clipped into
    the grid; points within NODE_SNAP cells of a node (per axis) are moved
    onto it, so a node's value never picks up weight from its neighbours. Returns (values (m, C), bad (m,)) where ``bad`` flags points
    whose stencil touches a non-finite node with non-zero weight.
    """
    d = len(sizes)
    strides = np.ones(d, dtype=np.int64)
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * sizes[a + 1]
    r = (X - lo) / steps
    near = np.round(r)
    r = np.where(np.abs(r - near) < NODE_SNAP, near, r)
    idx = np.clip(np.floor(r).astype(np.int64), 0, sizes - 2)
    u = np.clip(r - idx, 0.0, 1.0)
    out = np.zeros((len(X), table.shape[1]))
    bad = np.zeros(len(X), dtype=np.bool_)
    for c in _corner_table(d):
        w = np.prod(np.where(c == 1, u, 1.0 - u), axis=1)
        vals = table[(idx + c) @ strides]
        used = w > 0
        bad |= used & ~np.all(np.isfinite(vals), axis=1)
        out += np.where(used[:, None], w[:, None] * np.where(np.isfinite(vals), vals, 0.0), 0.0)
    return out, bad


# ------------------------------------------------------------- numba path

if _HAVE_NUMBA:
    @numba.njit(cache=True)
    def quadratic_form_numba(gamma, v):
        m, n = v.shape
        out = np.zeros((m, n))
        for k in range(m):
            for h in range(n):
                s = 0.0
                for a in range(n):
                    va = v[k, a]
                    for b in range(n):
                        s += gamma[k, h, a, b] * va * v[k, b]
                out[k, h] = s
        return out

    @numba.njit(cache=True)
    def transform_law_numba(gamma, jac, jinv, hess):
        m, n = jac.shape[0], jac.shape[1]
        out = np.zeros((m, n, n, n))
        inner = np.zeros((n, n, n))
        for k in range(m):
            for g in range(n):
                for i in range(n):
                    for j in range(n):
                        s = hess[k, g, i, j]
                        for a in range(n):
                            ja = jac[k, a, i]
                            for b in range(n):
                                s += gamma[k, g, a, b] * ja * jac[k, b, j]
                        inner[g, i, j] = s
            for h in range(n):
                for i in range(n):
                    for j in range(n):
                        s = 0.0
                        for g in range(n):
                            s += jinv[k, h, g] * inner[g, i, j]
                        out[k, h, i, j] = s
        return out

    @numba.njit(cache=True)
    def cumtrapz_numba(values, dt):
        k, m = values.shape
        out = np.zeros((k, m))
        for j in range(m):
            acc = 0.0
            for i in range(1, k):
                acc += 0.5 * dt * (values[i, j] + values[i - 1, j])
                out[i, j] = acc
        return out

    @numba.njit(cache=True)
    def multilinear_numba(table, lo, steps, sizes, X):
        m, d = X.shape
        C = table.shape[1]
        strides = np.ones(d, dtype=np.int64)
        for a in range(d - 2, -1, -1):
            strides[a] = strides[a + 1] * sizes[a + 1]
        out = np.zeros((m, C))
        bad = np.zeros(m, dtype=np.bool_)
        idx = np.empty(d, dtype=np.int64)
        u = np.empty(d)
        for k in range(m):
            for a in range(d):
                r = (X[k, a] - lo[a]) / steps[a]
                if abs(r - np.round(r)) < NODE_SNAP:
                    r = np.round(r)
                i = min(max(int(np.floor(r)), 0), sizes[a] - 2)
                idx[a] = i
                u[a] = min(max(r - i, 0.0), 1.0)
            for c in range(2 ** d):
                w = 1.0
                node = 0
                for a in range(d):
                    bit = (c >> (d - 1 - a)) & 1
                    w *= u[a] if bit else 1.0 - u[a]
                    node += (idx[a] + bit) * strides[a]
                if w > 0:
                    for j in range(C):
                        v = table[node, j]
                        if np.isfinite(v):
                            out[k, j] += w * v
                        else:
                            bad[k] = True
        return out, bad
else:  # pragma: no cover
    multilinear_numba = multilinear_numpy
    quadratic_form_numba = quadratic_form_numpy
    transform_law_numba = transform_law_numpy
    cumtrapz_numba = cumtrapz_numpy


def _contig(*arrays):
    return [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]


if USE_NUMBA:
    def quadratic_form(gamma, v):
        return quadratic_form_numba(*_contig(gamma, v))

    def transform_law(gamma, jac, jinv, hess):
        return transform_law_numba(*_contig(gamma, jac, jinv, hess))

    def cumtrapz(values, dt):
        shape = values.shape
        flat = np.ascontiguousarray(values, dtype=np.float64).reshape(shape[0], -1)
        return cumtrapz_numba(flat, float(dt)).reshape(shape)

    def multilinear(table, lo, steps, sizes, X):
        return multilinear_numba(*_contig(table, lo, steps),
                                 np.ascontiguousarray(sizes, dtype=np.int64), *_contig(X))
else:
    multilinear = multilinear_numpy
    quadratic_form = quadratic_form_numpy
    transform_law = transform_law_numpy
    cumtrapz = cumtrapz_numpy


BACKEND = "numba" if USE_NUMBA else "numpy"
