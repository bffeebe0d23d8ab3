"""Envelopes of functions subharmonic on graphs, and their smoothing.

Fields live on the product of a :class:`~wzwlab.geometry.DomainGrid` (the
``z`` factor) and a :class:`~wzwlab.geometry.SphereGrid` (the ``x`` factor);
values are stored as ``(dgrid.size, sgrid.size)`` arrays. Off-grid values
come from multilinear interpolation in the computational coordinates of both
grids, ``(t, theta_z)`` or ``(Re z, Im z)`` and ``(log|x|, arg x)``.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._laplace import DomainLaplacian
from ._stencil import _axis_weights, interp
from .errors import (
    CapacityError,
    ConditioningError,
    DomainShrinkError,
    NonConvergenceError,
    PreconditionError,
)
from .geometry import DomainGrid, SphereGrid, reference_potential
from .quantization import kahler_margin

# -- fields -------------------------------------------------------------------


@dataclass(eq=False)
class PotentialField:
    """Real function sampled on ``D x X``.

    Attributes
    ----------
    dgrid : DomainGrid
    sgrid : SphereGrid
    values : ndarray, shape (dgrid.size, sgrid.size)
    boundary_values : ndarray, shape (dgrid.n_boundary, sgrid.size), optional
        Prescribed data at the boundary nodes (sampled at their projections).
    history : list of float
        Iteration diagnostics (largest decrement per sweep for envelopes).
    valid : ndarray of bool, shape (dgrid.size, sgrid.size), optional
        Nodes where the values are trusted (set by :func:`mollify_field`).
    """

    dgrid: DomainGrid
    sgrid: SphereGrid
    values: np.ndarray
    boundary_values: np.ndarray = None
    history: list = field(default_factory=list)
    valid: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.dgrid.size, self.sgrid.size):
            raise ValueError(f"values must have shape {(self.dgrid.size, self.sgrid.size)}")
        if not np.all(np.isfinite(v[self.dgrid.domain.ravel()])):
            raise PreconditionError("potential field has non-finite values")
        self.values = v

    @property
    def axes(self):
        return self.dgrid.axes + self.sgrid.axes

    @property
    def periodic(self):
        return self.dgrid.periodic + self.sgrid.periodic

    def node_values(self):
        return self.values.reshape(self.dgrid.shape + self.sgrid.shape)

    def at(self, z, x):
        """Interpolated values at paired points ``z`` (P, m) and ``x`` (P,)."""
        pts = np.concatenate([self.dgrid.coords_of(z), self.sgrid.coords_of(np.ravel(x))],
                             axis=1)
        return interp(self.node_values(), self.axes, self.periodic, pts)

    def copy(self, values=None):
        return PotentialField(self.dgrid, self.sgrid,
                              self.values.copy() if values is None else values,
                              self.boundary_values, list(self.history), self.valid)

    def describe(self):
        g = self.sgrid
        return {"dgrid": self.dgrid.describe(),
                "sgrid": {"kind": g.kind, "s": g.s.tolist(), "theta": g.theta.tolist(),
                          "weights": g.weights.tolist()}}


def _boundary_samples(v, dgrid, sgrid):
    """Values of boundary data at ``(zeta, x)`` for every boundary node."""
    if callable(v):
        return np.stack([np.asarray(v(zb, sgrid.nodes), dtype=float) for zb in dgrid.zeta])
    vals = np.asarray(v, dtype=float)
    if vals.shape != (dgrid.n_boundary, sgrid.size):
        raise ValueError(f"boundary data must have shape {(dgrid.n_boundary, sgrid.size)}")
    return vals


# -- harmonic majorant ----------------------------------------------------------


class _SphereOperator:
    """``2 u_{x xbar} / psi_{x xbar}`` on a sphere grid, diagonalized.

    In the moment coordinate the operator reads
    ``2 d_s(s(1-s) u_s) + u_thth / (2 s(1-s))``. It is discretized by finite
    volumes: ring cells around the grid latitudes, plus one cap cell at each
    pole carrying a single (angle-independent) auxiliary value. The nodal
    operator is an M-matrix, and an FFT in the angle followed by one
    generalized symmetric eigenproblem per Fourier mode diagonalizes it.
    Only the mean mode couples to the caps; the other modes vanish there.

    Extended nodal vectors have ``sgrid.size + 2`` entries: the grid nodes,
    then the values at ``s = 0`` and ``s = 1``.
    """

    def __init__(self, sgrid):
        s = sgrid.s
        ns, nth = sgrid.shape
        self.shape = (ns, nth)
        faces = np.concatenate([[s[0] / 2], 0.5 * (s[1:] + s[:-1]), [(1 + s[-1]) / 2]])
        vol = np.diff(faces)
        flux = 2.0 * faces * (1 - faces)
        gaps = np.concatenate([[s[0]], np.diff(s), [1 - s[-1]]])
        flux = flux / gaps
        caps = np.array([faces[0], 1 - faces[-1]])
        c = 1.0 / (2.0 * s * (1 - s))
        h = 2 * np.pi / nth
        mu = (2 - 2 * np.cos(2 * np.pi * np.arange(nth) / nth)) / h**2

        ring = np.zeros((ns, ns))
        i = np.arange(ns - 1)
        ring[i, i] -= flux[1:-1]
        ring[i + 1, i + 1] -= flux[1:-1]
        ring[i, i + 1] += flux[1:-1]
        ring[i + 1, i] += flux[1:-1]
        ring[0, 0] -= flux[0]
        ring[-1, -1] -= flux[-1]

        # mean mode: [south cap, rings, north cap]
        K0 = np.zeros((ns + 2, ns + 2))
        K0[1:-1, 1:-1] = ring
        K0[0, 0] = -flux[0]
        K0[0, 1] = K0[1, 0] = flux[0]
        K0[-1, -1] = -flux[-1]
        K0[-1, -2] = K0[-2, -1] = flux[-1]
        M0 = np.concatenate([[caps[0]], vol, [caps[1]]])
        w, V = linalg.eigh(K0, np.diag(M0))
        self.blocks = [(w, V, M0)]
        for q in range(1, nth):
            w, V = linalg.eigh(ring - np.diag(vol * c * mu[q]), np.diag(vol))
            self.blocks.append((w, V, vol))
        self.eigenvalues = np.concatenate([b[0] for b in self.blocks])

    def extend(self, u):
        """Append cap values (ring means) to nodal arrays (..., ns * nth)."""
        ns, nth = self.shape
        r = u.reshape(u.shape[:-1] + (ns, nth))
        return np.concatenate([u, r[..., 0, :].mean(-1, keepdims=True),
                               r[..., -1, :].mean(-1, keepdims=True)], axis=-1)

    def forward(self, u):
        """Extended nodal (..., size + 2) -> mode coefficients (..., size + 2)."""
        ns, nth = self.shape
        lead = u.shape[:-1]
        uh = np.fft.fft(u[..., :-2].reshape(lead + (ns, nth)), axis=-1)
        out = []
        for q, (_, V, M) in enumerate(self.blocks):
            col = uh[..., q]
            if q == 0:
                col = np.concatenate([nth * u[..., -2:-1], col, nth * u[..., -1:]], axis=-1)
            out.append((M * col) @ V)
        return np.concatenate(out, axis=-1)

    def inverse(self, coef):
        """Mode coefficients -> extended nodal values."""
        ns, nth = self.shape
        lead = coef.shape[:-1]
        uh = np.empty(lead + (ns, nth), dtype=complex)
        pos = 0
        for q, (w, V, _) in enumerate(self.blocks):
            col = coef[..., pos:pos + w.size] @ V.T
            pos += w.size
            if q == 0:
                caps = col[..., [0, -1]] / nth
                col = col[..., 1:-1]
            uh[..., q] = col
        nodal = np.fft.ifft(uh, axis=-1).real.reshape(lead + (ns * nth,))
        return np.concatenate([nodal, caps.real], axis=-1)

    def apply(self, u):
        """The operator on nodal values (..., ns * nth) (caps from ring means)."""
        return self.inverse(self.eigenvalues * self.forward(self.extend(u)))[..., :-2]


def harmonic_majorant(v, dgrid, sgrid, source=None):
    """Solve ``sum_j h_{z_j zbar_j} + 2 h_{x xbar}/psi_{x xbar} + 2 = source``.

    With ``h = v`` on ``dD x X``. Every function subharmonic on graphs with
    boundary values ``<= v`` lies below ``h``. The discrete operator is an
    M-matrix, so the comparison principle holds exactly.

    Parameters
    ----------
    v : callable or ndarray
        Boundary data ``v(zeta, x)`` or samples (n_boundary, sgrid.size).
    dgrid : DomainGrid
    sgrid : SphereGrid
    source : ndarray, optional
        Right-hand side at interior nodes, shape (n_interior, sgrid.size);
        zero by default.

    Returns
    -------
    PotentialField
    """
    from scipy.sparse import identity
    from scipy.sparse.linalg import splu

    vb = _boundary_samples(v, dgrid, sgrid)
    lap = DomainLaplacian(dgrid)
    op = _SphereOperator(sgrid)
    full = np.zeros((dgrid.size, sgrid.size + 2))
    full[dgrid.boundary_index] = op.extend(vb)
    rhs = -(lap.coupling @ full) - 2.0
    if source is not None:
        rhs = rhs + op.extend(np.asarray(source, dtype=float))
    rh = op.forward(rhs)
    sol = np.empty_like(rh)
    A = lap.matrix
    n = A.shape[0]
    eye = identity(n, format="csc")
    lam = op.eigenvalues
    key = np.round(lam, 10)
    for val in np.unique(key):
        sel = np.flatnonzero(key == val)
        try:
            lu = splu((A + lam[sel[0]] * eye).tocsc())
        except RuntimeError as exc:
            raise ConditioningError(f"majorant system singular: {exc}") from None
        block = rh[:, sel]
        sol[:, sel] = lu.solve(np.ascontiguousarray(block.real)) + 1j * lu.solve(
            np.ascontiguousarray(block.imag))
    full[dgrid.interior_index] = op.inverse(sol)
    out = np.ascontiguousarray(full[:, :-2])
    dgrid.extend(out)
    return PotentialField(dgrid, sgrid, out, vb)


# -- toric oracle -----------------------------------------------------------------


def _profile(phi):
    """``u(t) = psi + phi`` as a function of ``t = log|x|^2``."""

    def u(t):
        x = np.exp(0.5 * t)
        return np.log1p(np.exp(t)) + phi(x)

    return u


def _slope(u, t, h=1e-5):
    return (u(t + h) - u(t - h)) / (2 * h)


def _bisect(fn, target, lo, hi, iters=64):
    """Vectorized bisection for increasing ``fn`` on ``[lo, hi]``."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), np.shape(target)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), np.shape(target)).copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = fn(mid) < target
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


def toric_geodesic_oracle(phi0, phi1, dgrid, sgrid, t_bound=80.0):
    """Geodesic between rotation-invariant potentials by Legendre duality.

    With ``tau = log|z| / log r0`` (``phi0`` on ``|z| = 1``, ``phi1`` on
    ``|z| = r0``), the convex profiles ``u_i(t) = psi + phi_i`` in
    ``t = log|x|^2`` are transformed, ``u_tau^* = (1 - tau) u_0^* + tau u_1^*``,
    and transformed back. Transforms are evaluated exactly at the nodes by
    nested bisection on the slopes.

    Parameters
    ----------
    phi0, phi1 : callable
        Radial Kahler potentials of the chart coordinate.
    dgrid : DomainGrid
        An annulus.
    sgrid : SphereGrid

    Returns
    -------
    PotentialField
    """
    if dgrid.kind != "annulus":
        raise PreconditionError("the toric oracle needs an annulus")
    probe = np.exp(np.linspace(-6, 6, 97))
    for phi in (phi0, phi1):
        if not np.all(kahler_margin(phi, probe) > 0):
            raise PreconditionError("endpoint potential is not Kahler (profile not convex)")
    u0, u1 = _profile(phi0), _profile(phi1)
    r0 = dgrid.params["r0"]
    tau = np.clip(dgrid.axes[0] / np.log(r0), 0.0, 1.0)  # per radial z index
    t = 2.0 * sgrid.log_radius  # per radial x index
    T, P = np.meshgrid(tau, t, indexing="ij")

    def t_of(u, p):
        return _bisect(lambda s: _slope(u, s), p, -t_bound, t_bound)

    def dual_slope(p):
        return (1 - T) * t_of(u0, p) + T * t_of(u1, p)

    p = _bisect(dual_slope, P, 1e-300, 1.0 - 1e-16)
    t0, t1 = t_of(u0, p), t_of(u1, p)
    star = (1 - T) * (p * t0 - u0(t0)) + T * (p * t1 - u1(t1))
    ut = p * P - star
    vals = ut - np.log1p(np.exp(P))
    nz_th, nx_th = dgrid.shape[1], sgrid.shape[1]
    full = np.broadcast_to(vals[:, None, :, None],
                           (tau.size, nz_th, t.size, nx_th)).reshape(dgrid.size, sgrid.size)
    vb = full[dgrid.boundary_index]
    return PotentialField(dgrid, sgrid, full.copy(), vb.copy())


# -- graph family -------------------------------------------------------------


def _unit_directions(m):
    """Probe directions in C^m: the axes, plus four diagonal ones when m = 2."""
    if m == 1:
        return np.ones((1, 1), dtype=complex)
    r = 1.0 / np.sqrt(2.0)
    return np.array([[1, 0], [0, 1], [r, r], [r, -r], [r, 1j * r], [r, -1j * r]],
                    dtype=complex)


def _linear_corners(axes, periodic, pts):
    """Flat corner indices and weights of multilinear interpolation.

    Returns two (P, 2^d') arrays, ``d'`` counting the axes with more than
    one node (single-node axes contribute one corner of weight 1).
    """
    shape = tuple(a.size for a in axes)
    live = [a for a in range(len(axes)) if shape[a] > 1]
    parts = {a: _axis_weights(axes[a], periodic[a], pts[:, a]) for a in live}
    n = 1 << len(live)
    idx = np.zeros((pts.shape[0], n), dtype=np.int64)
    wt = np.ones((pts.shape[0], n))
    for corner in range(n):
        flat = np.zeros(pts.shape[0], dtype=np.int64)
        bit = 0
        for a in range(len(axes)):
            if a in parts:
                i0, i1, f = parts[a]
                if corner >> bit & 1:
                    i = i1
                    wt[:, corner] *= f
                else:
                    i = i0
                    wt[:, corner] *= 1.0 - f
                bit += 1
            else:
                i = 0
            flat = flat * shape[a] + i
        idx[:, corner] = flat
    return idx, wt


@dataclass(eq=False)
class HolomorphicGraphFamily:
    """Affine holomorphic graphs probed on small discs around every node.

    At an interior base point ``(z0, x0)`` the graph ``f(z) = x0 + a.(z - z0)``
    is sampled on the circle ``z0 + r e^{i t} d`` for each probe direction
    ``d``; only ``b = a.d`` matters there, and ``b`` runs over ``0`` and
    ``rho e^{2 pi i q / n_directions} * scale`` with ``scale = x0 / z0`` on
    an annulus and ``x0`` otherwise. The scale follows the natural
    dilations of the problem, so the same relative magnitudes serve every
    base point.

    Attributes
    ----------
    dgrid, sgrid : grids of the field
    magnitudes : tuple of float
        Relative slope magnitudes ``rho``.
    n_directions : int
        Slope phases per magnitude.
    radii : tuple of float
        Probe radii (in cells) for the constant graphs.
    slope_radii : tuple of float
        Probe radii (in cells) for the non-constant graphs.
    n_circle : int
        Samples per probe circle.
    max_entries : int
        Budget of stored circle-mean weights; exceeding it raises
        :class:`~wzwlab.errors.CapacityError` while the system is built.

    Notes
    -----
    A probe disc must lie inside D (radii are shrunk to 0.9 of the distance
    to the boundary when needed), and a graph is used only if its circle in
    ``x`` stays inside the radial range of the sphere grid.
    """

    dgrid: DomainGrid
    sgrid: SphereGrid
    magnitudes: tuple = (0.25, 0.5, 1.0, 2.0)
    n_directions: int = 8
    radii: tuple = (2.0, 4.0, 8.0)
    slope_radii: tuple = (2.0, 4.0, 8.0, 16.0)
    n_circle: int = 16
    max_entries: int = 40_000_000
    _system: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.radii or min(self.radii) <= 0 or self.n_circle < 3:
            raise PreconditionError("graph family needs positive radii and >= 3 samples")

    def relative_slopes(self):
        """Relative slopes, the constant graph first."""
        q = np.arange(self.n_directions)
        rel = np.outer(self.magnitudes, np.exp(2j * np.pi * q / self.n_directions)).ravel()
        return np.concatenate([[0.0], rel])

    def system(self):
        """Sparse circle-mean operator (built once, then cached)."""
        if self._system is None:
            self._system = _GraphSystem(self)
        return self._system


class _GraphSystem:
    """Rows = (base point, graph); ``W @ w`` gives circle means of ``w``.

    ``w`` is the total potential ``psi + u`` flattened as
    ``z_index * sgrid.size + x_index``. Rows are grouped by base point and
    split into two colors by the parity of the ``z`` multi-index.
    """

    def __init__(self, fam):
        from scipy import sparse

        dg, sg = fam.dgrid, fam.sgrid
        nx = sg.size
        S = fam.n_circle
        circ = np.exp(2j * np.pi * np.arange(S) / S)
        rel = fam.relative_slopes()
        dirs = _unit_directions(dg.m)
        xmin, xmax = np.exp(sg.log_radius[0]), np.exp(sg.log_radius[-1])
        zflat = dg.z.reshape(dg.size, dg.m)
        cell = dg.cell_size().ravel()
        multi = np.array(np.unravel_index(dg.interior_index, dg.shape))
        parity = multi.sum(axis=0) % 2
        rows_by_color = {0: [], 1: []}
        n_total = dg.size * nx
        entries = 0
        for zi, col in zip(dg.interior_index, parity):
            z0 = zflat[zi]
            dist = float(dg.dist_to_boundary(z0[None, :])[0])
            discs = []
            for d in dirs:
                # largest radius keeping the disc in D along d
                if dg.kind == "annulus":
                    room = dist
                else:
                    nz = np.abs(d) > 0
                    room = np.min((1.0 - np.abs(z0[nz])) / np.abs(d[nz]))
                for radii, sloped in ((fam.radii, False), (fam.slope_radii, True)):
                    for rc in radii:
                        r = min(rc * cell[zi], 0.9 * room)
                        if r > 0:
                            discs.append((r, d, sloped))
            scale = sg.nodes / z0[0] if dg.kind == "annulus" else sg.nodes.astype(complex)
            for r, d, sloped in discs:
                zc = z0[None, :] + r * circ[:, None] * d[None, :]
                zidx, zwt = _linear_corners(dg.axes, dg.periodic, dg.coords_of(zc))
                b = (rel[None, :] * scale[:, None]) if sloped else np.zeros((nx, 1))
                K = b.shape[1]
                if sloped:
                    b = b[:, 1:]
                    K -= 1
                xs = sg.nodes[:, None, None] + b[:, :, None] * r * circ[None, None, :]
                ok = ((np.abs(xs) >= xmin) & (np.abs(xs) <= xmax)).all(axis=2)
                xj, kk = np.nonzero(ok)
                if xj.size == 0:
                    continue
                pts = xs[xj, kk].ravel()
                xidx, xwt = _linear_corners(sg.axes, sg.periodic, sg.coords_of(pts))
                nrow = xj.size
                cols = (zidx[None, :, :, None] * nx + xidx.reshape(nrow, S, 1, -1))
                wts = zwt[None, :, :, None] * xwt.reshape(nrow, S, 1, -1) / S
                base = zi * nx + xj
                width = cols.shape[1] * cols.shape[2] * cols.shape[3]
                W = sparse.csr_matrix((wts.ravel(), cols.ravel(),
                                       np.arange(0, nrow * width + 1, width)),
                                      shape=(nrow, n_total))
                W.sum_duplicates()
                W.eliminate_zeros()
                entries += W.nnz
                if entries > fam.max_entries:
                    raise CapacityError(
                        f"graph family needs more than {fam.max_entries} sparse entries; "
                        "use fewer magnitudes, directions, radii or circle samples")
                rows_by_color[col].append((base, W))
        self.colors = []
        for col in (0, 1):
            parts = rows_by_color[col]
            if not parts:
                continue
            base = np.concatenate([p[0] for p in parts])
            W = sparse.vstack([p[1] for p in parts], format="csr")
            order = np.argsort(base, kind="stable")
            base, W = base[order], W[order]
            starts = np.flatnonzero(np.r_[True, base[1:] != base[:-1]])
            self.colors.append((W, base, base[starts], starts))

    def margins(self, w, valid=None):
        """Circle mean minus center value, per row (concatenated colors).

        With a boolean ``valid`` mask, rows touching any invalid node are
        dropped.
        """
        out = []
        for W, base, _, _ in self.colors:
            m = W @ w - w[base]
            if valid is not None:
                bad = W @ (~valid).astype(float)
                m = m[(bad == 0) & valid[base]]
            out.append(m)
        return np.concatenate(out)

    def cut(self, w):
        """Two-color sweep of sub-mean-value cuts, in place; largest decrement."""
        dec = 0.0
        for W, _, nodes, starts in self.colors:
            target = np.minimum.reduceat(W @ w, starts)
            new = np.minimum(w[nodes], target)
            if new.size:
                dec = max(dec, float((w[nodes] - new).max()))
            w[nodes] = new
        return dec


def _fiberwise_harmonic(vb, dgrid):
    """Harmonic extension in ``z`` of boundary data, one column per ``x`` node."""
    full = np.zeros((dgrid.size, vb.shape[1]))
    full[dgrid.boundary_index] = vb
    out = DomainLaplacian(dgrid).extend(full)
    dgrid.extend(out)
    return out


def graph_sweep_envelope(v, family, tol=1e-7, max_sweeps=5000):
    """Upper envelope of functions subharmonic on the family's graphs.

    Starts from the smaller of two upper barriers, the harmonic majorant and
    the fiberwise harmonic extension in ``z``, and lowers every interior
    node to the circle mean of ``psi + u`` along each graph until one full
    sweep lowers no node by ``tol`` or more. The iteration decreases
    monotonically, so the result stays below both barriers.

    Parameters
    ----------
    v : callable or ndarray
        Boundary data ``v(zeta, x)`` or samples (n_boundary, sgrid.size).
    family : HolomorphicGraphFamily
    tol : float
    max_sweeps : int

    Returns
    -------
    PotentialField
        ``history`` holds the largest decrement of every sweep.

    Raises
    ------
    NonConvergenceError
        After ``max_sweeps``; carries the decrement history.
    """
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    dg, sg = family.dgrid, family.sgrid
    vb = _boundary_samples(v, dg, sg)
    upper = np.minimum(harmonic_majorant(vb, dg, sg).values, _fiberwise_harmonic(vb, dg))
    upper[dg.boundary_index] = vb
    system = family.system()
    psi = sg.psi_values[None, :]
    w = (upper + psi).ravel()
    fill = dg._fill_dst.size > 0
    history = []
    for _ in range(max_sweeps):
        dec = system.cut(w)
        if fill:
            dg.extend(w.reshape(dg.size, sg.size))
        history.append(dec)
        if dec < tol:
            break
    else:
        raise NonConvergenceError(
            f"envelope sweep: last decrement {history[-1]:.3e} after {max_sweeps} sweeps",
            history)
    vals = w.reshape(dg.size, sg.size) - psi
    vals[dg.boundary_index] = vb
    return PotentialField(dg, sg, vals, vb, history)


def check_graph_subharmonicity(u, family):
    """Worst sub-mean-value margin of ``psi(f) + u(., f)`` over the family.

    Returns ``min`` over base points and graphs of circle mean minus center
    value. Off-grid values interpolate ``psi + u`` multilinearly. When
    ``u.valid`` is set (mollified fields) only probes supported on valid
    nodes count; ``inf`` if there are none.
    """
    if family.dgrid is not u.dgrid or family.sgrid is not u.sgrid:
        raise PreconditionError("family and field live on different grids")
    w = (u.values + u.sgrid.psi_values[None, :]).ravel()
    valid = None if u.valid is None else np.asarray(u.valid).ravel()
    m = family.system().margins(w, valid)
    return float(m.min()) if m.size else float("inf")


# -- smoothing ------------------------------------------------------------------


def _bump(h):
    h = np.asarray(h, dtype=float)
    out = np.zeros_like(h)
    inside = np.abs(h) < 1
    out[inside] = np.exp(-1.0 / (1.0 - h[inside] ** 2))
    return out


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(200)
_BUMP_MASS = float(np.dot(_GL_WEIGHTS, _bump(_GL_NODES)))


def _bump_cdf(x):
    """``int_{-1}^{x} theta`` for the normalized bump ``theta``."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    half = 0.5 * (x + 1.0)
    pts = -1.0 + half[..., None] * (_GL_NODES + 1.0)
    return half * (_bump(pts) @ _GL_WEIGHTS) / _BUMP_MASS


def regularized_max(xi, t):
    """Smoothed maximum ``M_xi(t)``.

    The average of ``max(t_1 + h_1, ..., t_p + h_p)`` against the product of
    rescaled bumps ``theta(h_j / xi_j) / xi_j`` (``theta`` smooth, even,
    supported in ``[-1, 1]``, unit mass). The tensor integral is evaluated
    through the distribution of the maximum,
    ``M = a + int_a^b (1 - prod_j Theta((y - t_j) / xi_j)) dy`` with
    ``a = max(t - xi)``, ``b = max(t + xi)``, by adaptive quadrature between
    the breakpoints ``t_j +- xi_j``.

    Parameters
    ----------
    xi : array_like of float, positive
    t : array_like of float, same length

    Returns
    -------
    float
    """
    from scipy.integrate import quad

    xi = np.asarray(xi, dtype=float)
    t = np.asarray(t, dtype=float)
    if xi.shape != t.shape or xi.ndim != 1 or xi.size == 0:
        raise PreconditionError("xi and t must be equal-length vectors")
    if not np.all(xi > 0):
        raise PreconditionError("all xi must be positive")
    lo, hi = t - xi, t + xi
    top = int(np.argmax(lo))
    others = np.delete(hi, top)
    if others.size == 0 or lo[top] >= others.max():
        # the kernel support never reaches a competitor; the bump has mean 0
        return float(t[top])
    a, b = lo.max(), hi.max()

    def gap(y):
        return 1.0 - np.prod(_bump_cdf((y - t) / xi))

    brk = np.unique(np.concatenate([lo, hi]))
    brk = brk[(brk > a) & (brk < b)]
    edges = np.concatenate([[a], brk, [b]])
    total = 0.0
    for e0, e1 in zip(edges[:-1], edges[1:]):
        total += quad(gap, e0, e1, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return float(a + total)


def _lattice_kernel(delta):
    """Bump ``rho(|q| / delta)`` on integer offsets ``q`` in Z^2, normalized."""
    r = int(np.ceil(delta))
    q = np.arange(-r, r + 1)
    Q = np.stack(np.meshgrid(q, q, indexing="ij"), axis=-1).reshape(-1, 2)
    w = _bump(np.hypot(Q[:, 0], Q[:, 1]) / delta)
    keep = w > 0
    return Q[keep], w[keep] / w[keep].sum()


def _shift_average(values, shape, periodic, allowed, offsets, weights):
    """``sum_q weights_q values[p + q]`` over the leading axes ``shape``.

    ``offsets`` has one column per axis in ``shape``. Returns the average
    and the mask of nodes whose shifted stencil stays inside ``allowed``.
    """
    vals = values.reshape(shape + (-1,))
    out = np.zeros_like(vals)
    ok = np.ones(shape, dtype=bool)
    idx = np.indices(shape)
    for q, wq in zip(offsets, weights):
        src = []
        inside = np.ones(shape, dtype=bool)
        for ax, n in enumerate(shape):
            j = idx[ax] + q[ax]
            if periodic[ax]:
                j = j % n
            else:
                inside &= (j >= 0) & (j < n)
                j = np.clip(j, 0, n - 1)
            src.append(j)
        src = tuple(src)
        inside &= allowed[src]
        ok &= inside
        out += wq * vals[src]
    return out.reshape(values.shape), ok


def mollify_field(u, delta1, delta2, total=False):
    """Discrete convolution with radial bumps in ``z`` and in ``x``.

    The kernels are the bump sampled on whole-cell offsets of the
    computational grids, ``(log|z|, arg z)`` on an annulus, ``(Re z, Im z)``
    otherwise, and ``(log|x|, arg x)`` on the sphere; radii are in cells.
    For m = 2 the ``z`` kernel is the product of one kernel per coordinate.
    Symmetric weights keep constants and grid-affine functions fixed, and
    on uniform grids a shift by whole cells commutes with interpolation, so
    each averaged translate obeys the same discrete constraints as ``u``.

    By default ``u`` itself is averaged, which fixes constants and
    grid-affine functions. With ``total=True`` the total potential
    ``psi + u`` is averaged instead; on uniform grids this preserves every
    discrete graph margin away from the edges, because each shifted copy of
    ``psi + u`` satisfies the shifted constraints.

    Nodes whose kernel support leaves the domain keep their values and are
    flagged ``False`` in ``valid``.

    Parameters
    ----------
    u : PotentialField
    delta1, delta2 : float
        Kernel radii in cells (``z`` and ``x``); must exceed 1.
    total : bool

    Raises
    ------
    DomainShrinkError
        If no node admits the requested radii.
    """
    dg, sg = u.dgrid, u.sgrid
    if delta1 <= 1 or delta2 <= 1:
        raise PreconditionError("mollification radii must exceed one cell")
    qz, wz = _lattice_kernel(delta1)
    if dg.m == 2:
        i, j = np.meshgrid(np.arange(wz.size), np.arange(wz.size), indexing="ij")
        qz = np.concatenate([qz[i.ravel()], qz[j.ravel()]], axis=1)
        wz = wz[i.ravel()] * wz[j.ravel()]
    qx, wx = _lattice_kernel(delta2)
    psi = sg.psi_values[None, :] if total else np.zeros((1, sg.size))
    vals, zok = _shift_average(u.values + psi, dg.shape, dg.periodic, dg.domain, qz, wz)
    zok &= dg.domain
    xt = np.ascontiguousarray(vals.T)
    xt, xok = _shift_average(xt, sg.shape, sg.periodic, np.ones(sg.shape, dtype=bool),
                             qx, wx)
    zok, xok = zok.ravel(), xok.ravel()
    if not zok.any() or not xok.any():
        r1 = max(1, (min(n for n, p in zip(dg.shape, dg.periodic) if not p) - 1) // 2)
        r2 = (sg.shape[0] - 1) // 2
        raise DomainShrinkError(
            f"mollification radii too large: need delta1 < {r1} and delta2 < {r2} cells")
    valid = np.outer(zok, xok)
    res = np.where(valid, xt.T - psi, u.values)
    return PotentialField(dg, sg, res, u.boundary_values, list(u.history), valid)


# -- serialization ----------------------------------------------------------------

_FIELD_MAGIC = b"WZWPOT01"


def save_potential_field(path, u):
    """Write ``u`` as magic, JSON header and little-endian float64 payload.

    The payload holds ``values`` and then, if present, ``boundary_values``.
    """
    header = {"kind": "potential_field", **u.describe(), "dtype": "<f8",
              "has_boundary": u.boundary_values is not None,
              "shape": [u.dgrid.size, u.sgrid.size]}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())
        if u.boundary_values is not None:
            fh.write(np.ascontiguousarray(u.boundary_values, dtype="<f8").tobytes())


def load_potential_field(path):
    """Inverse of :func:`save_potential_field`."""
    with open(path, "rb") as fh:
        if fh.read(8) != _FIELD_MAGIC:
            raise PreconditionError(f"{path} is not a potential-field file")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    dg = DomainGrid.from_description(header["dgrid"])
    g = header["sgrid"]
    sg = SphereGrid(np.array(g["s"]), np.array(g["theta"]), np.array(g["weights"]),
                    kind=g["kind"])
    size = dg.size * sg.size
    vals = payload[:size].reshape(dg.size, sg.size).copy()
    vb = None
    if header["has_boundary"]:
        vb = payload[size:].reshape(dg.n_boundary, sg.size).copy()
    return PotentialField(dg, sg, vals, vb)
