"""Differential-geometric diagnostics of potentials on ``D x X``.

Conventions: ``d_z = (d_Re - i d_Im) / 2``, and ``Delta = 4 d dbar``.
Derivatives are centered differences in the computational coordinates of
the grids: ``w = log z`` (annulus) or ``w = z`` (disc, bidisc) in ``D``,
``xi = log x`` on the sphere. The chain rule brings them back to ``z`` and
``x``; ``psi_{x xbar}`` enters analytically.
"""
from dataclasses import dataclass

import numpy as np

from ._stencil import d1, d2
from .envelope import PotentialField
from .errors import DomainShrinkError, PreconditionError
from .geometry import SphereGrid, psi_ddbar

# Constant of the gradient contraction in the WZW residual; see
# :func:`calibrate_gradient_constant`.
GRADIENT_CONSTANT = 1.0


# -- mixed Hessians -------------------------------------------------------------


@dataclass(eq=False)
class MixedHessian:
    """Complex Hessians of ``psi + u`` in the pairs ``(z_j, x)``.

    Attributes
    ----------
    dgrid, sgrid : grids of the field
    matrices : ndarray, shape (dgrid.size, sgrid.size, m, 2, 2), complex
        ``[[H_{z z}, H_{z x}], [H_{x z}, H_{x x}]]`` (barred second index);
        NaN where the stencil is incomplete.
    valid : ndarray of bool, shape (dgrid.size, sgrid.size)
    """

    dgrid: object
    sgrid: SphereGrid
    matrices: np.ndarray
    valid: np.ndarray

    @property
    def leading(self):
        return self.matrices[..., 0, 0].real

    @property
    def off_diagonal(self):
        return self.matrices[..., 0, 1]

    @property
    def trailing(self):
        return self.matrices[..., 0, 1, 1].real


# Nodes per slab when derivatives are taken slab by slab along the first
# domain axis; bounds the working set on large product grids.
_SLAB_NODES = 1 << 21


class _Partials:
    """Lazy finite-difference partials of a node array ``F``."""

    def __init__(self, F, coords, periodic):
        self.F, self.coords, self.periodic = F, coords, periodic
        self._first = {}

    def first(self, a):
        if a not in self._first:
            self._first[a] = d1(self.F, a, self.coords[a], self.periodic[a])
        return self._first[a]

    def second(self, a, b):
        if a == b:
            return d2(self.F, a, self.coords[a], self.periodic[a])
        a, b = min(a, b), max(a, b)
        return d1(self.first(a), b, self.coords[b], self.periodic[b])


def _slabs(u):
    """Yield ``(lo, hi, inner, partials, jac)`` over slabs of the first domain axis.

    Each slab carries a one-row halo, so centered stencils at rows
    ``lo:hi`` coincide with those of the whole grid; ``inner`` selects those
    rows inside the slab. Nodes outside the domain or flagged invalid are
    NaN, so incomplete stencils surface as NaN.
    """
    dg, sg = u.dgrid, u.sgrid
    vals = np.array(u.values, dtype=float)
    mask = np.broadcast_to(dg.domain.ravel()[:, None], vals.shape).copy()
    if u.valid is not None:
        mask &= np.asarray(u.valid)
    vals[~mask] = np.nan
    F = vals.reshape(dg.shape + sg.shape)
    jac = dg.jac.reshape(dg.shape + (dg.m,))
    coords = list(dg.axes) + [sg.log_radius, sg.theta]
    per = list(dg.periodic) + [False, True]
    n0 = dg.shape[0]
    step = n0 if dg.periodic[0] else max(1, _SLAB_NODES // max(1, F[0].size))
    for lo in range(0, n0, step):
        hi = min(n0, lo + step)
        a, b = max(0, lo - 1), min(n0, hi + 1)
        sub = [np.asarray(coords[0])[a:b]] + coords[1:]
        yield lo, hi, slice(lo - a, hi - a), _Partials(F[a:b], sub, per), jac[a:b]


def mixed_hessian(u):
    """Assemble the mixed Hessians of ``psi + u`` at every node.

    Raises
    ------
    DomainShrinkError
        If no node has a complete stencil.
    """
    dg, sg = u.dgrid, u.sgrid
    nd = len(dg.shape)
    ia, ip = nd, nd + 1
    x = sg.nodes.reshape(sg.shape)
    bshape = (1,) * nd + sg.shape
    inv_x = (1.0 / x).reshape(bshape)
    psi_xx = psi_ddbar(x).reshape(bshape)
    mats = np.empty(dg.shape + sg.shape + (dg.m, 2, 2), dtype=complex)
    for lo, hi, inner, p, jac in _slabs(u):
        u_xx = (p.second(ia, ia) + p.second(ip, ip))[inner] * np.abs(inv_x) ** 2 / 4
        for j in range(dg.m):
            t, th = 2 * j, 2 * j + 1
            J = jac[inner][..., j].reshape(jac[inner].shape[:-1] + (1, 1))
            u_zz = np.abs(J) ** 2 * (p.second(t, t) + p.second(th, th))[inner] / 4
            u_wxi = 0.25 * (p.second(t, ia) + p.second(th, ip)
                            + 1j * (p.second(t, ip) - p.second(th, ia)))[inner]
            u_zx = J * np.conj(inv_x) * u_wxi
            blk = mats[lo:hi, ..., j, :, :]
            blk[..., 0, 0] = u_zz
            blk[..., 0, 1] = u_zx
            blk[..., 1, 0] = np.conj(u_zx)
            blk[..., 1, 1] = u_xx + psi_xx
    mats = mats.reshape((dg.size, sg.size, dg.m, 2, 2))
    valid = np.isfinite(mats).all(axis=(2, 3, 4))
    valid &= dg.interior.ravel()[:, None]
    if not valid.any():
        raise DomainShrinkError("no node has a complete difference stencil")
    mats[~valid] = np.nan
    return MixedHessian(dg, sg, mats, valid)


def _hessian(u):
    return u if isinstance(u, MixedHessian) else mixed_hessian(u)


def characteristic_form(u):
    """``sum_j det (psi + u)_j`` per node (NaN off the valid set)."""
    H = _hessian(u)
    M = H.matrices
    det = (M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]).real
    return det.sum(axis=-1)


def k_density(u):
    """``K = sum_j (u_{j jbar} - |u_{j xbar}|^2 / (psi + u)_{x xbar})`` per node.

    Satisfies ``K * trailing = characteristic_form``.

    Raises
    ------
    PreconditionError
        If the trailing entry is not positive at some valid node.
    """
    H = _hessian(u)
    T = H.trailing
    bad = H.valid & ~(T > 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise PreconditionError(
            f"trailing Hessian entry {T[i, j]:.3e} <= 0 at z-node {i}, x-node {j}")
    M = H.matrices
    return (M[..., 0, 0].real - np.abs(M[..., 0, 1]) ** 2 / M[..., 1, 1].real).sum(axis=-1)


# -- functions on X ---------------------------------------------------------------


def _on_sphere(f, sgrid):
    if callable(f):
        f = f(sgrid.nodes)
    f = np.broadcast_to(np.asarray(f), (sgrid.size,))
    if f.shape != (sgrid.size,):
        raise ValueError(f"expected values on {sgrid.size} sphere nodes")
    return f


def _s_weights(s):
    """Three-node first and second derivative weights in ``s`` at every node.

    Centered in the interior, one-sided at the two ends; exact for
    quadratics.
    """
    n = s.size
    if n < 3:
        raise DomainShrinkError("need at least three rings")
    idx = np.clip(np.arange(n) - 1, 0, n - 3)
    nodes = idx[:, None] + np.arange(3)[None, :]
    pts = s[nodes]
    w1 = np.empty((n, 3))
    w2 = np.empty((n, 3))
    for a in range(3):
        others = [b for b in range(3) if b != a]
        p, q = pts[:, others[0]], pts[:, others[1]]
        den = (pts[:, a] - p) * (pts[:, a] - q)
        # L_a(y) = (y - p)(y - q) / den
        w1[:, a] = (2 * s - p - q) / den
        w2[:, a] = 2.0 / den
    return nodes, w1, w2


def _modes(f, sgrid):
    """Angular Fourier modes of ``f`` with the polar factor removed.

    A function smooth on ``X`` has mode ``q`` of the form
    ``(s (1 - s))^{|q|/2} g_q(s)`` with ``g_q`` smooth up to both poles;
    differencing ``g_q`` instead of the mode itself keeps the radial
    derivatives accurate next to the poles.

    Returns ``(g, g_s, g_ss, alpha, m)`` with ``alpha = |q| / 2`` and
    ``m = s (1 - s)`` broadcastable against the (ns, nth) mode array.
    """
    ns, nth = sgrid.shape
    c = np.fft.fft(f.reshape(ns, nth), axis=1) / nth
    alpha = 0.5 * np.abs(np.fft.fftfreq(nth, 1.0 / nth))[None, :]
    s = sgrid.s[:, None]
    m = s * (1 - s)
    g = c / m**alpha
    nodes, w1, w2 = _s_weights(sgrid.s)
    gs = np.einsum("ik,ikq->iq", w1, g[nodes])
    gss = np.einsum("ik,ikq->iq", w2, g[nodes])
    return g, gs, gss, alpha, m


def _synth(modes, like):
    out = np.fft.ifft(modes, axis=1) * modes.shape[1]
    return out.ravel() if np.iscomplexobj(like) else out.real.ravel()


def _first_partials(f, sgrid):
    """``(f_s, f_theta)`` at the sphere nodes."""
    g, gs, _, alpha, m = _modes(f, sgrid)
    s = sgrid.s[:, None]
    nth = sgrid.shape[1]
    q = np.fft.fftfreq(nth, 1.0 / nth)[None, :]
    if nth % 2 == 0:
        q[0, nth // 2] = 0.0
    c = m**alpha * g
    cs = m**alpha * (alpha * (1 - 2 * s) * g / m + gs)
    return _synth(cs, f), _synth(1j * q * c, f)


def density_ratio(phi, sgrid):
    """``omega_phi / omega = 1 + phi_{x xbar} / psi_{x xbar}`` at the nodes.

    In the moment coordinate ``s`` this is ``1 + d_s(s(1-s) phi_s) +
    phi_thth / (4 s (1 - s))``, evaluated mode by mode so that the
    ``1 / (s (1 - s))`` terms cancel analytically.
    """
    p = np.asarray(_on_sphere(phi, sgrid).real, dtype=float)
    g, gs, gss, alpha, m = _modes(p, sgrid)
    s = sgrid.s[:, None]
    lap = m**alpha * (-2 * alpha * (1 + 2 * alpha) * g
                      + (2 * alpha + 1) * (1 - 2 * s) * gs + m * gss)
    return 1 + _synth(lap, p)


def poisson_bracket(phi, f, g, sgrid):
    """``{f, g} = (f_x g_xbar - f_xbar g_x) / (i rho_phi)`` on a sphere grid.

    In the moment coordinates ``(s, theta)`` this is
    ``(f_s g_theta - f_theta g_s) * psi_{x xbar} / rho_phi``. Angular
    derivatives are spectral; inputs may be complex.

    Raises
    ------
    PreconditionError
        If ``rho_phi`` is not positive somewhere.
    """
    ratio = density_ratio(phi, sgrid)
    if not np.all(ratio > 0):
        raise PreconditionError(f"degenerate omega_phi: min ratio {ratio.min():.3e}")
    fs, ft = _first_partials(_on_sphere(f, sgrid), sgrid)
    gs, gt = _first_partials(_on_sphere(g, sgrid), sgrid)
    return (fs * gt - ft * gs) / ratio


def phi_weights(phi, sgrid):
    """Quadrature weights of ``omega_phi``, normalized to total mass 1."""
    w = sgrid.weights * density_ratio(phi, sgrid)
    return w / w.sum()


def mabuchi_pairing(phi, xi, eta, sgrid):
    """``g_M(xi, eta) = int_X xi eta omega_phi`` (unit total mass)."""
    w = phi_weights(phi, sgrid)
    return float(np.real(np.sum(w * _on_sphere(xi, sgrid) * _on_sphere(eta, sgrid))))


def _bracket_pairing(phi, a, b, c, sgrid, w):
    return np.sum(w * poisson_bracket(phi, a, b, sgrid) * _on_sphere(c, sgrid))


def theta_form(phi, xi1, xi2, xi3, sgrid):
    """``int_X {xi1, xi2} xi3 omega_phi``, symmetrized over cyclic shifts.

    The integral is cyclic in the continuum; averaging its three cyclic
    shifts makes the discrete value exactly alternating, so any repeated
    argument gives 0.
    """
    w = phi_weights(phi, sgrid)
    a, b, c = xi1, xi2, xi3
    tot = (_bracket_pairing(phi, a, b, c, sgrid, w) + _bracket_pairing(phi, b, c, a, sgrid, w)
           + _bracket_pairing(phi, c, a, b, sgrid, w))
    return float(np.real(tot) / 3.0)


# -- maps into the space of potentials ----------------------------------------------


def _slab_z_derivatives(p, inner, jac, inv_x, j):
    """``Phi_{z_j}``, ``Phi_{z_j zbar_j}``, ``Phi_{z_j x}``, ``Phi_{z_j xbar}`` on one slab."""
    nd = jac.ndim - 1
    ia, ip, t, th = nd, nd + 1, 2 * j, 2 * j + 1
    J = jac[inner][..., j].reshape(jac[inner].shape[:-1] + (1, 1))
    fz = 0.5 * J * (p.first(t) - 1j * p.first(th))[inner]
    fzz = np.abs(J) ** 2 * (p.second(t, t) + p.second(th, th))[inner] / 4
    # d_w d_xi and d_w d_xibar of Phi
    w_xi = 0.25 * (p.second(t, ia) - p.second(th, ip)
                   - 1j * (p.second(t, ip) + p.second(th, ia)))[inner]
    w_xib = 0.25 * (p.second(t, ia) + p.second(th, ip)
                    + 1j * (p.second(t, ip) - p.second(th, ia)))[inner]
    return fz, fzz, J * inv_x * w_xi, J * np.conj(inv_x) * w_xib


def _inv_x(Phi):
    nd = len(Phi.dgrid.shape)
    x = Phi.sgrid.nodes.reshape(Phi.sgrid.shape)
    return (1.0 / x).reshape((1,) * nd + Phi.sgrid.shape)


def _z_derivatives(Phi):
    """Per ``j``: ``Phi_{z_j}``, ``Phi_{z_j zbar_j}``, ``Phi_{z_j x}``, ``Phi_{z_j xbar}``."""
    dg, sg = Phi.dgrid, Phi.sgrid
    inv_x = _inv_x(Phi)
    full = dg.shape + sg.shape
    out = [tuple(np.empty(full, dtype=c) for c in (complex, float, complex, complex))
           for _ in range(dg.m)]
    for lo, hi, inner, p, jac in _slabs(Phi):
        for j in range(dg.m):
            for dst, src in zip(out[j], _slab_z_derivatives(p, inner, jac, inv_x, j)):
                dst[lo:hi] = src
    return out


def _rho(Phi):
    H = mixed_hessian(Phi)
    return H, H.trailing.reshape(Phi.dgrid.shape + Phi.sgrid.shape)


def wzw_residual(Phi, c0=None):
    """``sum_j |grad Phi_{z_j}|^2 - 2 Phi_{z_j zbar_j} + i {Phi_{zbar_j}, Phi_{z_j}}``.

    The gradient norm of the complex function ``f = Phi_{z_j}`` is the
    contraction ``c0 (|f_x|^2 + |f_xbar|^2) / rho`` with
    ``rho = (psi + Phi)_{x xbar}``; the bracket term equals
    ``(|Phi_{z xbar}|^2 - |Phi_{z x}|^2) / rho``. With ``c0 = 1`` the
    residual is ``-2 K``.

    Returns
    -------
    ndarray, shape (dgrid.size, sgrid.size)
        Real residual, NaN off the valid set.

    Raises
    ------
    PreconditionError
        If ``rho`` is not positive at a valid node.
    """
    c0 = GRADIENT_CONSTANT if c0 is None else c0
    grad, rest = _residual_parts(Phi)
    return c0 * grad + rest


def _residual_parts(Phi):
    H, rho = _rho(Phi)
    bad = H.valid & ~(H.trailing > 0)
    if bad.any():
        raise PreconditionError(f"degenerate omega_Phi at {int(bad.sum())} nodes")
    inv_x = _inv_x(Phi)
    full = Phi.dgrid.shape + Phi.sgrid.shape
    grad, rest = np.zeros(full), np.zeros(full)
    for lo, hi, inner, p, jac in _slabs(Phi):
        r = rho[lo:hi]
        for j in range(Phi.dgrid.m):
            _, fzz, fzx, fzxb = _slab_z_derivatives(p, inner, jac, inv_x, j)
            gx2, gxb2 = np.abs(fzx) ** 2, np.abs(fzxb) ** 2
            grad[lo:hi] += (gx2 + gxb2) / r
            # i {Phi_zbar, Phi_z} for real Phi
            rest[lo:hi] += -2 * fzz + (gxb2 - gx2) / r
    shape = (Phi.dgrid.size, Phi.sgrid.size)
    grad = np.where(H.valid, grad.reshape(shape), np.nan)
    rest = np.where(H.valid, rest.reshape(shape), np.nan)
    return grad, rest


def calibrate_gradient_constant(fields, sign=-1.0):
    """Least-squares ``c0`` matching ``wzw_residual`` to ``sign * 2 K``.

    ``K = characteristic_form / trailing``. Returns ``(c0, agreement)``
    where ``agreement`` is the fraction of valid nodes at which the
    calibrated residual and ``sign * K`` share their sign.
    """
    num = den = 0.0
    parts = []
    for Phi in fields:
        grad, rest = _residual_parts(Phi)
        K = k_density(Phi)
        ok = np.isfinite(grad) & np.isfinite(K)
        target = sign * 2 * K[ok]
        num += np.sum(grad[ok] * (target - rest[ok]))
        den += np.sum(grad[ok] ** 2)
        parts.append((grad[ok], rest[ok], K[ok]))
    c0 = num / den
    agree = total = 0
    for grad, rest, K in parts:
        r = c0 * grad + rest
        agree += np.sum(np.sign(r) == np.sign(sign * K))
        total += K.size
    return float(c0), agree / total


def dirichlet_energy(Phi):
    """``E = sum_j int_D 4 g_M(Phi_{z_j}, Phi_{zbar_j}) dV``.

    ``g_M`` uses the normalized weights of ``omega_{Phi(z)}`` at every
    ``z``; the ``D`` integral uses the grid's nodal volume weights over the
    nodes with complete stencils.
    """
    dg, sg = Phi.dgrid, Phi.sgrid
    H, rho = _rho(Phi)
    ratio = rho / psi_ddbar(sg.nodes.reshape(sg.shape))
    w = sg.weights.reshape(sg.shape) * ratio
    w = w / w.sum(axis=(-2, -1), keepdims=True)
    total = 0.0
    vol = dg.volume_weights()
    zok = H.valid.all(axis=1).reshape(dg.shape)
    for fz, _, _, _ in _z_derivatives(Phi):
        gm = np.sum(w * np.abs(fz) ** 2, axis=(-2, -1))
        total += 4 * np.sum(np.where(zok, gm, 0.0) * vol)
    return float(total)
