"""Finite differences and multilinear interpolation on tensor grids.

Grid arrays carry the grid axes first; any trailing axes (matrix entries,
the X factor, ...) ride along untouched.
"""
import numpy as np


def _shift(f, axis, step, periodic):
    if periodic:
        return np.roll(f, -step, axis=axis)
    out = np.full_like(f, np.nan)
    src = [slice(None)] * f.ndim
    dst = [slice(None)] * f.ndim
    if step > 0:
        src[axis] = slice(step, None)
        dst[axis] = slice(None, -step)
    else:
        src[axis] = slice(None, step)
        dst[axis] = slice(-step, None)
    out[tuple(dst)] = f[tuple(src)]
    return out


def _spacings(coords, axis, ndim, periodic):
    """Forward and backward spacings broadcastable along ``axis``."""
    c = np.asarray(coords, dtype=float)
    n = c.size
    if periodic:
        h = c[1] - c[0] if n > 1 else 1.0
        hp = np.full(n, h)
        hm = np.full(n, h)
    else:
        hp = np.full(n, np.nan)
        hm = np.full(n, np.nan)
        hp[:-1] = np.diff(c)
        hm[1:] = np.diff(c)
    shape = [1] * ndim
    shape[axis] = n
    return hp.reshape(shape), hm.reshape(shape)


def d1(f, axis, coords, periodic=False):
    """Centered first derivative (second order on smooth nonuniform grids).

    Non-periodic end nodes are NaN.
    """
    n = f.shape[axis]
    if periodic and n == 1:
        return np.zeros_like(f)
    hp, hm = _spacings(coords, axis, f.ndim, periodic)
    fp = _shift(f, axis, 1, periodic)
    fm = _shift(f, axis, -1, periodic)
    return (hm**2 * (fp - f) - hp**2 * (fm - f)) / (hp * hm * (hp + hm))


def d2(f, axis, coords, periodic=False):
    """Three-point second derivative. Non-periodic end nodes are NaN."""
    n = f.shape[axis]
    if periodic and n == 1:
        return np.zeros_like(f)
    hp, hm = _spacings(coords, axis, f.ndim, periodic)
    fp = _shift(f, axis, 1, periodic)
    fm = _shift(f, axis, -1, periodic)
    return 2.0 * (hm * (fp - f) + hp * (fm - f)) / (hp * hm * (hp + hm))


def _axis_weights(coords, periodic, q):
    """Lower index and upper weight of each query coordinate on one axis."""
    c = np.asarray(coords, dtype=float)
    n = c.size
    if n == 1:
        z = np.zeros(q.shape, dtype=int)
        return z, z, np.zeros(q.shape)
    if periodic:
        h = c[1] - c[0]
        u = (q - c[0]) / h
        i0 = np.floor(u)
        w = u - i0
        i0 = i0.astype(int) % n
        return i0, (i0 + 1) % n, w
    qc = np.clip(q, c[0], c[-1])
    i0 = np.clip(np.searchsorted(c, qc, side="right") - 1, 0, n - 2)
    w = (qc - c[i0]) / (c[i0 + 1] - c[i0])
    return i0, i0 + 1, w


def _axis_stencil(coords, periodic, q, npts):
    """Node indices (npts, P) and Lagrange weights for one uniform axis."""
    c = np.asarray(coords, dtype=float)
    n = c.size
    if n == 1:
        return np.zeros((1,) + q.shape, dtype=int), np.ones((1,) + q.shape)
    h = c[1] - c[0]
    u = (q - c[0]) / h
    first = np.floor(u).astype(int) - (npts // 2 - 1)
    if not periodic:
        if n < npts:
            raise ValueError("axis too short for the interpolation order")
        u = np.clip(u, 0.0, n - 1.0)
        first = np.clip(np.floor(u).astype(int) - (npts // 2 - 1), 0, n - npts)
    offs = np.arange(npts)
    nodes = first[None, :] + offs[:, None]
    x = u[None, :] - nodes
    w = np.ones((npts,) + q.shape)
    for a in range(npts):
        for b in range(npts):
            if a != b:
                # x[a] - (b - a) is the offset of the query from node b
                w[a] *= (x[a] - (b - a)) / (a - b)
    if periodic:
        nodes = nodes % n
    return nodes, w


def interp(values, axes, periodic, points, order=1):
    """Tensor-product Lagrange interpolation (multilinear for ``order=1``).

    ``order=3`` uses four nodes per axis (fourth-order accurate) and needs
    uniform axes.

    Parameters
    ----------
    values : ndarray, shape (n_1, ..., n_d, ...)
    axes : sequence of 1-D coordinate arrays (increasing)
    periodic : sequence of bool
    points : ndarray, shape (P, d)
        Query points in grid coordinates. Non-periodic coordinates are
        clamped to the grid range.

    Returns
    -------
    ndarray, shape (P, ...)
    """
    d = len(axes)
    pts = np.asarray(points, dtype=float)
    if order == 3:
        return _interp_cubic(values, axes, periodic, pts)
    lo, hi, wt = [], [], []
    for a in range(d):
        i0, i1, w = _axis_weights(axes[a], periodic[a], pts[:, a])
        lo.append(i0)
        hi.append(i1)
        wt.append(w)
    tail = values.shape[d:]
    out = np.zeros((pts.shape[0],) + tail, dtype=values.dtype)
    for corner in range(1 << d):
        idx = []
        w = np.ones(pts.shape[0])
        for a in range(d):
            if corner >> a & 1:
                idx.append(hi[a])
                w = w * wt[a]
            else:
                idx.append(lo[a])
                w = w * (1.0 - wt[a])
        out += w.reshape((-1,) + (1,) * len(tail)) * values[tuple(idx)]
    return out


def _interp_cubic(values, axes, periodic, pts):
    d = len(axes)
    sten = [_axis_stencil(axes[a], periodic[a], pts[:, a], 4) for a in range(d)]
    tail = values.shape[d:]
    out = np.zeros((pts.shape[0],) + tail, dtype=values.dtype)
    for combo in np.ndindex(*[s[0].shape[0] for s in sten]):
        idx = tuple(sten[a][0][combo[a]] for a in range(d))
        w = np.ones(pts.shape[0])
        for a in range(d):
            w = w * sten[a][1][combo[a]]
        out += w.reshape((-1,) + (1,) * len(tail)) * values[idx]
    return out
