"""Hermitian-Yang-Mills metrics on the trivial bundle ``D x H^0(X, L^k)^*``.

A metric field assigns a positive Hermitian matrix ``H(z)`` to every node
of a :class:`~wzwlab.geometry.DomainGrid`; the norm of a vector ``f`` is
``f^H H f``. Curvature is ``R(H) = sum_j d_{zbar_j}(H^-1 d_{z_j} H)``, signed
so that ``exp(|z|^2) I`` has ``R = +I``; ``R >= 0`` makes ``log ||f||_H``
subharmonic for holomorphic ``f``.

Discretization
--------------
Everything is assembled in the symmetric frame ``Rs = H^1/2 R H^-1/2``.
Writing ``P = H^-1/2`` and ``L_a^+- = log(P H_{a+-} P)`` for the neighbors along
axis ``a`` (spacing ``h``), on each coordinate pair ``(a, b)`` of ``z_j``::

    Rs_j = |dw_j/dz_j|^2 / 4 * [ (L_a^+ + L_a^-)/h_a^2 + (L_b^+ + L_b^-)/h_b^2
                                 + i [B_a, B_b] ],
    B_a = P (H_{a+} - H_{a-}) P / (2 h_a).

The first bracket is the discrete tension (the Karcher-mean defect of the
stencil), the commutator is what separates HYM from a harmonic map. Both
are second order and reduce to the scalar Laplacian of ``log H`` whenever
the field is diagonal.

Solver
------
``H <- H^1/2 exp(eps S) H^1/2`` with ``S = -Lap^-1(Rs)`` and ``Lap`` the scalar
Dirichlet Laplacian (factorized once). For commuting data this is Newton's
method and converges in a single step; ``eps`` is backtracked on the residual.
Positivity is preserved by construction.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ._laplace import DomainLaplacian, axis_coefficients, neighbor_table
from .errors import NonConvergenceError, PreconditionError
from .geometry import DomainGrid
from .quantization import dual_gram, hilbert_map

# -- batched Hermitian matrix functions ---------------------------------------


def _herm(A):
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def _is_diagonal(A):
    n = A.shape[-1]
    return not np.any(A[..., ~np.eye(n, dtype=bool)])


def _diag(A):
    return np.einsum("...ii->...i", A)


def _from_diag(d):
    out = np.zeros(d.shape + (d.shape[-1],), dtype=complex)
    np.einsum("...ii->...i", out)[...] = d
    return out


def _hfun(A, fn):
    """Apply a scalar function to a stack of Hermitian matrices."""
    if _is_diagonal(A):
        return _from_diag(fn(_diag(A).real))
    w, V = np.linalg.eigh(A)
    return (V * fn(w)[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def _sqrt_pair(A):
    if _is_diagonal(A):
        d = _diag(A).real
        return _from_diag(np.sqrt(d)), _from_diag(1.0 / np.sqrt(d))
    w, V = np.linalg.eigh(A)
    Vh = np.conj(np.swapaxes(V, -1, -2))
    return (V * np.sqrt(w)[..., None, :]) @ Vh, (V * (1 / np.sqrt(w))[..., None, :]) @ Vh


def _logm(A):
    return _hfun(A, np.log)


def _expm(A):
    return _hfun(A, np.exp)


def _opnorm(A):
    """Spectral norm of each matrix in a stack."""
    return np.linalg.norm(A, ord=2, axis=(-2, -1))


# -- data types -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryMetric:
    """Prescribed dual-basis matrices on the boundary nodes of a grid.

    ``values[i]`` belongs to the flat node ``grid.boundary_index[i]``.
    """

    k: int
    values: np.ndarray

    def __post_init__(self):
        v = _herm(np.asarray(self.values, dtype=complex))
        ev = np.linalg.eigvalsh(v)
        if not np.all(ev[:, 0] > 0):
            raise PreconditionError("boundary matrices must be positive definite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rank(self):
        return self.values.shape[-1]

    def scaled(self, c):
        return BoundaryMetric(self.k, c * self.values)

    def conjugated(self, U):
        """``U B U^H`` at every node."""
        U = np.asarray(U, dtype=complex)
        return BoundaryMetric(self.k, U @ self.values @ U.conj().T)


@dataclass(eq=False)
class HermitianMetricField:
    """Positive Hermitian matrix per node of a DomainGrid (dual basis).

    Attributes
    ----------
    grid : DomainGrid
    values : ndarray, shape (grid.size, N, N)
        Flat node order. Nodes outside the domain carry nearest-node copies.
    k : int
    residual, iterations : float, int
        Filled in by :func:`solve_hym`.
    history, energy : list of float
        Residual and relaxation energy before each accepted update.
    """

    grid: DomainGrid
    values: np.ndarray
    k: int = 0
    residual: float = float("nan")
    iterations: int = 0
    history: list = field(default_factory=list)
    energy: list = field(default_factory=list)

    basis = "dual"

    @property
    def rank(self):
        return self.values.shape[-1]

    def node_values(self):
        """Values reshaped to ``grid.shape + (N, N)``."""
        return self.values.reshape(self.grid.shape + self.values.shape[-2:])

    def boundary_values(self):
        return self.values[self.grid.boundary_index]

    def min_eigenvalue(self):
        dom = self.grid.domain.ravel()
        return float(np.linalg.eigvalsh(self.values[dom])[:, 0].min())

    @classmethod
    def from_function(cls, grid, fn, k=0):
        """Sample ``fn(z) -> (P, N, N)`` at every node (``z`` has shape (P, m))."""
        vals = np.asarray(fn(grid.z.reshape(grid.size, grid.m)), dtype=complex)
        return cls(grid, _herm(vals), k)

    @property
    def energy_monotone(self):
        e = self.energy
        return all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(e, e[1:]))


# -- boundary data --------------------------------------------------------------


def boundary_from_potentials(k, v, grid, sgrid):
    """``H_k^*(v_zeta)`` at every boundary node.

    Parameters
    ----------
    k : int
    v : callable or ndarray
        ``v(zeta, x)`` with ``zeta`` of shape (m,) and ``x`` an array of chart
        points, or precomputed values of shape (grid.n_boundary, sgrid.size).
        Each slice must be a Kahler potential.
    grid : DomainGrid
    sgrid : SphereGrid

    Returns
    -------
    BoundaryMetric
    """
    sgrid.require_capacity(k)
    zeta = grid.zeta
    out = np.empty((zeta.shape[0], k + 1, k + 1), dtype=complex)
    if callable(v):
        cache = {}
        for i, zb in enumerate(zeta):
            key = tuple(np.round(zb, 14))
            if key not in cache:
                phi = (lambda x, zb=zb: v(zb, x))
                cache[key] = dual_gram(hilbert_map(k, phi, sgrid)).entries
            out[i] = cache[key]
    else:
        vals = np.asarray(v, dtype=float)
        if vals.shape != (zeta.shape[0], sgrid.size):
            raise ValueError(f"expected values of shape {(zeta.shape[0], sgrid.size)}")
        for i in range(zeta.shape[0]):
            out[i] = dual_gram(hilbert_map(k, vals[i], sgrid)).entries
    return BoundaryMetric(k, out)


# -- curvature ------------------------------------------------------------------


class _Stencil:
    """Neighbor indices and coefficients at interior nodes."""

    def __init__(self, grid):
        self.grid = grid
        self.index = grid.interior_index
        self.nb = neighbor_table(grid, self.index)
        self.coef = axis_coefficients(grid, self.index)
        self.h = grid.spacing


def _sym_log(P, Hn, Hc):
    """``log(P Hn P)``, exactly zero where the neighbor equals the center."""
    L = _logm(_herm(P @ Hn @ P))
    same = np.all(Hn == Hc, axis=(-2, -1))
    L[same] = 0.0
    return L


def _sym_curvature(values, st):
    """Return ``(Rs, H^1/2)`` at the interior nodes."""
    Hc = values[st.index]
    S, P = _sqrt_pair(Hc)
    Rs = np.zeros_like(Hc)
    grid = st.grid
    for j in range(grid.m):
        B = []
        for ax in (2 * j, 2 * j + 1):
            plus, minus = st.nb[ax]
            c = st.coef[ax][:, None, None]
            Hp, Hm = values[plus], values[minus]
            Rs += c * (_sym_log(P, Hp, Hc) + _sym_log(P, Hm, Hc))
            # c = |jac|^2 / (4 h^2); the commutator needs |jac|^2 / (4 * 4 h_a h_b)
            B.append(P @ (Hp - Hm) @ P / (2.0 * st.h[ax]))
        jac2 = np.abs(grid.jac.reshape(grid.size, grid.m)[st.index, j]) ** 2
        comm = B[0] @ B[1] - B[1] @ B[0]
        Rs += (jac2 / 4.0)[:, None, None] * 1j * comm
    return _herm(Rs), S


def _as_values(H):
    if isinstance(H, HermitianMetricField):
        return H.grid, np.asarray(H.values, dtype=complex)
    raise TypeError("expected a HermitianMetricField")


def curvature_contraction(H):
    """Discrete ``R(H) = sum_j d_{zbar_j}(H^-1 d_{z_j} H)`` at interior nodes.

    Parameters
    ----------
    H : HermitianMetricField

    Returns
    -------
    ndarray, shape (n_interior, N, N)
        Ordered like ``H.grid.interior_index``.
    """
    grid, values = _as_values(H)
    Rs, S = _sym_curvature(values, _Stencil(grid))
    _, P = _sqrt_pair(values[grid.interior_index])
    return P @ Rs @ S


def _residual(Rs, S, Hc):
    """``sup ||H R||_op / ||H||_op`` with ``H R = H^1/2 Rs H^1/2``."""
    if Rs.shape[0] == 0:
        return 0.0
    return float(np.max(_opnorm(S @ Rs @ S) / _opnorm(Hc)))


def hym_residual(H):
    """Relative sup-norm residual of a metric field."""
    grid, values = _as_values(H)
    Rs, S = _sym_curvature(values, _Stencil(grid))
    return _residual(Rs, S, values[grid.interior_index])


def _edge_list(grid):
    """Undirected edges touching the interior, with Dirichlet-energy weights."""
    idx = grid.interior_index
    is_int = np.zeros(grid.size, dtype=bool)
    is_int[idx] = True
    vol = float(np.prod(grid.spacing))
    a_list, b_list, w_list = [], [], []
    for ax, (plus, minus) in enumerate(neighbor_table(grid, idx)):
        if grid.shape[ax] == 1:
            continue
        w = vol / grid.spacing[ax] ** 2
        ext = ~is_int[minus]
        a_list += [idx, idx[ext]]
        b_list += [plus, minus[ext]]
        w_list += [np.full(idx.size, w), np.full(int(ext.sum()), w)]
    return np.concatenate(a_list), np.concatenate(b_list), np.concatenate(w_list)


def relaxation_energy(H, edges=None):
    """``sum_edges w_e d(H_a, H_b)^2`` with the affine-invariant distance.

    ``d(A, B) = ||log(A^-1/2 B A^-1/2)||_F``; this is the discrete Dirichlet
    energy of the field as a map into positive matrices.
    """
    grid, values = _as_values(H)
    a, b, w = edges if edges is not None else _edge_list(grid)
    return _energy(values, a, b, w)


def _energy(values, a, b, w, chunk=4096):
    total = 0.0
    for i in range(0, a.size, chunk):
        A, B = values[a[i:i + chunk]], values[b[i:i + chunk]]
        if _is_diagonal(A) and _is_diagonal(B):
            d2 = np.sum(np.log(_diag(B).real / _diag(A).real) ** 2, axis=-1)
        else:
            _, P = _sqrt_pair(A)
            ev = np.linalg.eigvalsh(_herm(P @ B @ P))
            d2 = np.sum(np.log(ev) ** 2, axis=-1)
        total += float(w[i:i + chunk] @ d2)
    return total


# -- solver ---------------------------------------------------------------------


def _initial_field(boundary, grid, lap):
    """Log-Euclidean harmonic extension of the boundary data."""
    N = boundary.rank
    vals = np.zeros((grid.size, N, N), dtype=complex)
    vals[grid.boundary_index] = boundary.values
    first = boundary.values[0]
    if np.all(boundary.values == first):
        vals[grid.domain.ravel()] = first
        return grid.extend(vals)
    logs = np.zeros_like(vals)
    logs[grid.boundary_index] = _logm(boundary.values)
    logs = lap.extend(logs)
    vals[grid.interior_index] = _expm(_herm(logs[grid.interior_index]))
    return grid.extend(vals)


def solve_hym(boundary, grid, tol=1e-8, max_iters=50, mode="relax", flow_step=0.9,
              max_halvings=30):
    """Solve ``R(H) = 0`` in the interior with ``H = boundary`` on the boundary.

    Parameters
    ----------
    boundary : BoundaryMetric
    grid : DomainGrid
    tol : float
        Target for ``sup_nodes ||H R||_op / ||H||_op``.
    max_iters : int
    mode : {"relax", "flow"}
        ``"relax"`` is the preconditioned geodesic relaxation; ``"flow"`` is an
        explicit Euler step of the heat-type flow ``dH/dt = H^1/2 Rs H^1/2``,
        kept for cross-checks.
    flow_step : float
        Fraction of the explicit stability limit used in ``"flow"`` mode.
    max_halvings : int
        Backtracking budget per relaxation step.

    Returns
    -------
    HermitianMetricField

    Raises
    ------
    NonConvergenceError
        After ``max_iters`` updates (or a stalled line search), carrying the
        residual and energy histories.
    """
    if not tol > 0:
        raise PreconditionError("tol must be positive")
    if boundary.values.shape[0] != grid.n_boundary:
        raise PreconditionError("boundary data do not match the grid")
    if mode not in ("relax", "flow"):
        raise PreconditionError("mode must be 'relax' or 'flow'")
    lap = DomainLaplacian(grid)
    st = _Stencil(grid)
    edges = _edge_list(grid)
    vals = _initial_field(boundary, grid, lap)
    idx = grid.interior_index
    history, energy = [], []

    def state(v):
        Rs, S = _sym_curvature(v, st)
        return Rs, S, _residual(Rs, S, v[idx])

    Rs, S, res = state(vals)
    if mode == "flow":
        dt = flow_step / max(float(np.max(sum(2 * c for c in st.coef))), 1e-300)
    it = 0
    while True:
        history.append(res)
        energy.append(_energy(vals, *edges))
        if res <= tol:
            break
        if it >= max_iters:
            raise NonConvergenceError(
                f"HYM residual {res:.3g} > {tol:.3g} after {it} iterations",
                history, energy)
        if mode == "flow":
            step = dt * Rs
            eps = 1.0
        else:
            step = -lap.solve(Rs)
            eps = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            trial = vals.copy()
            trial[idx] = _herm(S @ _expm(_herm(eps * step)) @ S)
            grid.extend(trial)
            tRs, tS, tres = state(trial)
            if mode == "flow" or tres < res:
                accepted = True
                break
            eps *= 0.5
        if not accepted:
            raise NonConvergenceError(
                f"HYM line search stalled at residual {res:.3g}", history, energy)
        vals, Rs, S, res = trial, tRs, tS, tres
        it += 1
    vals[grid.boundary_index] = boundary.values
    return HermitianMetricField(grid, vals, boundary.k, res, it, history, energy)


# -- subharmonic norm check -------------------------------------------------------


class PolynomialSections:
    """Vector-valued holomorphic polynomials ``f_s(z) = sum_a c[s, a] z^a``.

    Parameters
    ----------
    coeffs : ndarray, shape (S, n_monomials, N)
    exponents : ndarray of int, shape (n_monomials, m)
    """

    def __init__(self, coeffs, exponents):
        self.coeffs = np.asarray(coeffs, dtype=complex)
        self.exponents = np.asarray(exponents, dtype=int)

    @classmethod
    def random(cls, n_samples, rank, m=1, degree=2, seed=0):
        """Gaussian coefficients on all monomials of total degree <= ``degree``."""
        rng = np.random.default_rng(seed)
        grids = np.meshgrid(*[np.arange(degree + 1)] * m, indexing="ij")
        ex = np.stack([g.ravel() for g in grids], axis=1)
        ex = ex[ex.sum(axis=1) <= degree]
        c = rng.standard_normal((n_samples, ex.shape[0], rank, 2)) @ [1.0, 1j]
        return cls(c / np.sqrt(2), ex)

    def __len__(self):
        return self.coeffs.shape[0]

    def __call__(self, z):
        """Values at points ``z`` (shape (P, m)): array (S, P, N)."""
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        mono = np.prod(z[:, None, :] ** self.exponents[None, :, :], axis=-1)
        return np.einsum("pa,san->spn", mono, self.coeffs)


def _interp_log_field(logs, grid, z, order=3):
    """Log-Euclidean interpolation of the field at physical points ``z``."""
    from ._stencil import interp

    vals = logs.reshape(grid.shape + logs.shape[-2:])
    pts = grid.coords_of(z)
    return _expm(_herm(interp(vals, grid.axes, grid.periodic, pts, order=order)))


def check_subharmonic_norm(H, sections, probe_radius=None, n_probe=32,
                           max_centers=400, chunk=16, interp_order=3):
    """Worst sub-mean-value defect of ``log ||f||_H`` over probe circles.

    For every center (interior nodes at least ``probe_radius`` from the
    boundary, thinned to at most ``max_centers``) and every coordinate
    direction ``e_j``, compares the mean of ``log ||f(z + r e^{it} e_j)||_H``
    with the value at ``z``. A subharmonic norm gives a nonnegative result.

    Parameters
    ----------
    H : HermitianMetricField
    sections : callable
        ``sections(z) -> (S, P, N)``, e.g. :class:`PolynomialSections`.
    probe_radius : float, optional
        Defaults to two cells at the coarsest point of the grid.
    interp_order : {1, 3}
        Order of the log-Euclidean interpolation of ``H`` at probe points;
        linear interpolation leaves an ``O(h^2)`` defect, cubic ``O(h^4)``.

    Returns
    -------
    float
        ``min`` over sections, centers and directions of (mean - center).
    """
    grid = H.grid
    if probe_radius is None:
        probe_radius = 2.0 * float(np.max(grid.cell_size()[grid.interior]))
    zflat = grid.z.reshape(grid.size, grid.m)
    cand = grid.interior_index
    ok = grid.dist_to_boundary(zflat[cand]) >= probe_radius * (1 + 1e-9)
    cand = cand[ok]
    if cand.size == 0:
        raise PreconditionError("probe radius leaves no admissible centers")
    if cand.size > max_centers:
        cand = cand[np.linspace(0, cand.size - 1, max_centers).round().astype(int)]
    logs = _logm(np.asarray(H.values, dtype=complex))
    t = 2 * np.pi * np.arange(n_probe) / n_probe
    centers = zflat[cand]
    Hc = np.asarray(H.values)[cand]
    worst = np.inf
    for j in range(grid.m):
        pts = np.repeat(centers[:, None, :], n_probe, axis=1)
        pts[:, :, j] += probe_radius * np.exp(1j * t)[None, :]
        pts = pts.reshape(-1, grid.m)
        Hp = _interp_log_field(logs, grid, pts, interp_order)
        for sub in _chunks(sections, chunk):
            Fp = sub(pts)
            Fc = sub(centers)
            qp = np.einsum("spi,pij,spj->sp", Fp.conj(), Hp, Fp).real
            qc = np.einsum("spi,pij,spj->sp", Fc.conj(), Hc, Fc).real
            mean = 0.5 * np.log(qp).reshape(Fp.shape[0], -1, n_probe).mean(axis=-1)
            worst = min(worst, float(np.min(mean - 0.5 * np.log(qc))))
    return worst


def _chunks(sections, size):
    """Split polynomial families into batches; other callables stay whole."""
    if not isinstance(sections, PolynomialSections):
        return [sections]
    return [PolynomialSections(sections.coeffs[i:i + size], sections.exponents)
            for i in range(0, len(sections), size)]


# -- checkpoints --------------------------------------------------------------------

_MAGIC = b"WZWHYM01"


def save_metric_field(path, H, tol=None):
    """Write a checkpoint: magic, header length, JSON header, complex64 payload.

    Layout: 8 bytes ``WZWHYM01``; little-endian uint32 header length; UTF-8
    JSON header; then ``grid.size * N * N`` little-endian complex64 values in
    row-major (node, row, column) order.
    """
    header = {
        "grid": H.grid.describe(),
        "k": int(H.k),
        "rank": int(H.rank),
        "tol": None if tol is None else float(tol),
        "residual": float(H.residual),
        "iterations": int(H.iterations),
        "dtype": "<c8",
        "order": "node,row,col",
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.asarray(H.values, dtype="<c8").tobytes(order="C"))


def load_metric_field(path):
    """Read a checkpoint written by :func:`save_metric_field`."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise PreconditionError(f"{path}: not a metric-field checkpoint")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode())
        payload = np.frombuffer(fh.read(), dtype="<c8")
    grid = DomainGrid.from_description(header["grid"])
    N = header["rank"]
    vals = payload.astype(complex).reshape(grid.size, N, N)
    return HermitianMetricField(grid, _herm(vals), header["k"], header["residual"],
                                header["iterations"])
