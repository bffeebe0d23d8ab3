"""Hilbert map, dual inner products and the Fubini-Study map on P^1.

Matrix convention: a Gram matrix ``G`` represents the inner product
``<c, c> = c^H G c`` on coefficient vectors ``c`` of ``s = sum_j c_j e_j``.
Concretely ``G[j, l] = int conj(x^j) x^l exp(-k psi - k phi) omega_hat``.
With this convention the Chern curvature of a matrix field ``H(z)`` is
``dbar(H^-1 d H)``, which is what :mod:`wzwlab.hym` discretizes.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConditioningError, PreconditionError
from .geometry import fiber_section_vector, psi_ddbar

MAX_CONDITION = 1e14


def scaled_condition(A):
    """Condition number after symmetric diagonal (Jacobi) scaling.

    The monomial basis alone makes ``H_k(0)`` as ill-conditioned as the
    central binomial coefficient; Cholesky is equivariant under diagonal
    scaling, so this is the number that governs the actual accuracy.
    """
    A = np.asarray(A, dtype=complex)
    d = np.sqrt(np.abs(np.einsum("...ii->...i", A)))
    if np.any(d == 0):
        return np.inf
    ev = np.linalg.eigvalsh(A / (d[..., :, None] * d[..., None, :]))
    return np.where(ev[..., 0] > 0, ev[..., -1] / np.maximum(ev[..., 0], 1e-300), np.inf)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Positive Hermitian inner product on ``H^0(X, L^k)`` or its dual."""

    k: int
    entries: np.ndarray
    basis: str = "primal"

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=complex)
        if a.shape != (self.k + 1, self.k + 1):
            raise ValueError(f"expected {(self.k + 1,) * 2} matrix, got {a.shape}")
        if self.basis not in ("primal", "dual"):
            raise ValueError("basis must be 'primal' or 'dual'")
        a = 0.5 * (a + a.conj().T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.entries)[0])

    def condition(self):
        """Jacobi-scaled condition number (see :func:`scaled_condition`)."""
        return float(scaled_condition(self.entries))

    def scaled(self, c):
        return GramMatrix(self.k, c * self.entries, self.basis)


def _as_matrix(G):
    return np.asarray(G.entries if isinstance(G, GramMatrix) else G, dtype=complex)


def ddbar_numeric(f, x, rel_step=2e-3):
    """``f_{x xbar}`` of a real callable by a fourth-order stencil.

    The step scales like ``1 + |x|``: small against ``|x|`` (so the chart
    expansion stays valid near infinity) and against the spherical scale.
    """
    x = np.asarray(x, dtype=complex)
    h = rel_step * (1.0 + np.abs(x))
    c = (-1.0, 16.0, -30.0, 16.0, -1.0)
    lap = np.zeros(x.shape)
    for e in (1.0, 1j):
        acc = sum(ci * f(x + (i - 2) * e * h) for i, ci in enumerate(c) if ci != -30.0)
        acc = acc - 30.0 * f(x)
        lap += acc / (12.0 * h**2)
    return lap / 4.0


def kahler_margin(phi, x):
    """``(psi + phi)_{x xbar} / psi_{x xbar}`` at the points ``x``."""
    return 1.0 + ddbar_numeric(phi, x) / psi_ddbar(x)


def _phi_values(phi, grid):
    if callable(phi):
        return np.asarray(phi(grid.nodes), dtype=float)
    vals = np.asarray(phi, dtype=float)
    if vals.ndim == 0:
        return np.full(grid.size, float(vals))
    if vals.shape != (grid.size,):
        raise ValueError(f"phi must have shape ({grid.size},)")
    return vals


def _check_kahler(phi, grid):
    if callable(phi):
        marg = kahler_margin(phi, grid.nodes)
    else:
        marg = _grid_kahler_margin(_phi_values(phi, grid), grid)
    bad = np.nanargmin(marg)
    if not marg[bad] > 0:
        raise PreconditionError(
            f"omega + i ddbar phi not positive at x = {grid.nodes[bad]:.4g} "
            f"(ratio {marg[bad]:.3g})"
        )


def _grid_kahler_margin(vals, grid):
    from ._stencil import d2

    u = (grid.psi_values + vals).reshape(grid.shape)
    a, th = grid.axes
    lap = d2(u, 0, a) + d2(u, 1, th, periodic=True)
    r2 = np.exp(2 * a)[:, None]
    return (lap / (4 * r2) / psi_ddbar(np.sqrt(r2))).ravel()


def hilbert_map(k, phi, grid, check=True):
    """``H_k(phi)``: the L^2 inner product of ``exp(-k phi) h^k`` on sections.

    Parameters
    ----------
    k : int
        Degree.
    phi : callable or ndarray
        Real potential, either a function of the chart coordinate or its
        values at ``grid.nodes``.
    grid : SphereGrid
    check : bool
        Verify ``omega + i ddbar phi > 0`` at the nodes first.

    Returns
    -------
    GramMatrix
    """
    grid.require_capacity(k)
    vals = _phi_values(phi, grid)
    if check:
        _check_kahler(phi, grid)
    w = np.exp(np.log(grid.weights) - k * vals)
    U = grid.fiber_sections(k)
    G = (U.conj().T * w) @ U
    return GramMatrix(k, G, "primal")


def dual_gram(G):
    """Inner product dual to ``G`` on the dual basis: ``conj(G^-1)``."""
    A = _as_matrix(G)
    cond = scaled_condition(A)
    if not cond <= MAX_CONDITION:
        raise ConditioningError(f"Gram matrix condition number {cond:.3g}")
    inv = linalg.cho_solve(linalg.cho_factor(A), np.eye(A.shape[0]))
    k = A.shape[0] - 1
    basis = "primal"
    if isinstance(G, GramMatrix):
        k = G.k
        basis = "dual" if G.basis == "primal" else "primal"
    return GramMatrix(k, inv.conj(), basis)


def fubini_study(k, G, x):
    """``FS_k(G)(x) = (1/k) log sup_{G(s,s) <= 1} h^k(s, s)(x)``.

    Evaluated as ``(1/k) log(u^T G^-1 conj(u))`` with the fiber-weighted
    section vector ``u = x^j (1 + |x|^2)^(-k/2)``; the ``- psi`` of the
    unweighted formula is absorbed in ``u``.
    """
    A = _as_matrix(G)
    if isinstance(G, GramMatrix) and G.basis != "primal":
        raise PreconditionError("fubini_study expects a primal Gram matrix")
    cond = scaled_condition(A)
    if not cond <= MAX_CONDITION:
        raise ConditioningError(f"Gram matrix condition number {cond:.3g}")
    x = np.asarray(x, dtype=complex)
    u = fiber_section_vector(k, x).reshape(-1, k + 1)
    L = linalg.cholesky(A, lower=True)
    y = linalg.solve_triangular(L, u.T.conj(), lower=True)
    q = np.sum(np.abs(y) ** 2, axis=0)
    return (np.log(q) / k).reshape(x.shape)


def fubini_study_of_dual(k, V, x, chunk=64):
    """``FS_k(V^*)`` for a stack of dual-basis matrices ``V``.

    Since ``dual(V)^-1 = conj(V)``, no inversion is needed:
    ``FS_k(V^*)(x) = (1/k) log(u^H V u)``.

    Parameters
    ----------
    V : ndarray, shape (..., k+1, k+1)
    x : ndarray, shape (P,)

    Returns
    -------
    ndarray, shape V.shape[:-2] + (P,)
    """
    V = np.asarray(V, dtype=complex)
    lead = V.shape[:-2]
    Vf = V.reshape((-1, k + 1, k + 1))
    u = fiber_section_vector(k, np.asarray(x, dtype=complex).ravel())
    off = Vf - np.einsum("nii->ni", Vf)[:, :, None] * np.eye(k + 1)
    if not np.any(off):
        q = np.einsum("ni,pi->np", np.einsum("nii->ni", Vf).real, np.abs(u) ** 2)
    else:
        q = np.empty((Vf.shape[0], u.shape[0]))
        uT = u.T
        for i in range(0, Vf.shape[0], chunk):
            T = Vf[i:i + chunk] @ uT
            q[i:i + chunk] = np.einsum("jp,njp->np", uT.conj(), T).real
    return (np.log(q) / k).reshape(lead + (u.shape[0],))


def tcz_gap(k, phi, grid):
    """``sup_X |FS_k(H_k(phi)) - phi|`` over the grid nodes."""
    G = hilbert_map(k, phi, grid)
    fs = fubini_study(k, G, grid.nodes)
    return float(np.max(np.abs(fs - _phi_values(phi, grid))))
