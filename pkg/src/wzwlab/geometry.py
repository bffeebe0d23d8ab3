"""The concrete model: X = P^1 with L = O(1), Fubini-Study metric, and grids.

Conventions used across the package:

* ``psi(x) = log(1 + |x|^2)`` is the local potential of omega on the affine
  chart; ``omega = i ddbar psi`` and ``psi_xxbar = (1 + |x|^2)^-2``.
* Measures on X are taken against ``omega_hat = omega / 2 pi`` (total mass 1).
  In the moment coordinate ``s = |x|^2 / (1 + |x|^2)`` this is simply
  ``ds dtheta / 2 pi``; the un-normalized form is ``2 pi`` times it.
* Wirtinger derivatives: ``d_z = (d_Re - i d_Im) / 2``; the Laplacian is
  ``4 d_z d_zbar``.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.spatial import cKDTree

from .errors import CapacityError, PreconditionError


def reference_potential(x):
    """Local potential ``psi(x) = log(1 + |x|^2)`` of the Fubini-Study form."""
    return np.log1p(np.abs(x) ** 2)


def psi_ddbar(x):
    """``psi_{x xbar} = (1 + |x|^2)^-2``."""
    return 1.0 / (1.0 + np.abs(x) ** 2) ** 2


def section_vector(k, x):
    """Monomial basis evaluated at ``x``: ``(1, x, ..., x^k)``.

    Returns an array of shape ``x.shape + (k + 1,)``.
    """
    x = np.asarray(x, dtype=complex)
    return x[..., None] ** np.arange(k + 1)


def fiber_section_vector(k, x):
    """Sections weighted by the fiber metric: ``x^j (1 + |x|^2)^(-k/2)``.

    Every entry has modulus at most one, so this is the overflow-safe way to
    form ``h^k(s, s)`` for large k.
    """
    x = np.asarray(x, dtype=complex)
    root = np.sqrt(1.0 + np.abs(x) ** 2)
    a = (x / root)[..., None]
    b = (1.0 / root)[..., None]
    j = np.arange(k + 1)
    return a**j * b ** (k - j)


@dataclass(frozen=True)
class SectionBasis:
    """Monomial basis ``e_j(x) = x^j`` of ``H^0(P^1, O(k))``."""

    k: int

    @property
    def size(self):
        return self.k + 1

    def evaluate(self, x):
        return section_vector(self.k, x)

    def fiber_weight(self, x):
        """``w_k(x) = exp(-k psi(x))``."""
        return np.exp(-self.k * reference_potential(x))

    def pointwise_norm(self, j, x):
        """``h^k(e_j, e_j)(x) = |x|^{2j} (1 + |x|^2)^-k``."""
        return np.abs(fiber_section_vector(self.k, x)[..., j]) ** 2


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Tensor-product nodes on P^1 with weights for ``omega_hat``.

    Nodes are ordered radial-major: node ``i * n_angular + q`` sits at moment
    coordinate ``s[i]`` and angle ``theta[q]``.
    """

    s: np.ndarray
    theta: np.ndarray
    weights: np.ndarray
    kind: str = "gauss"
    log_radius: np.ndarray = field(init=False)
    nodes: np.ndarray = field(init=False)
    psi_values: np.ndarray = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        a = 0.5 * (np.log(s) - np.log1p(-s))
        r = np.exp(a)
        x = (r[:, None] * np.exp(1j * np.asarray(self.theta))[None, :]).ravel()
        object.__setattr__(self, "s", _frozen(s))
        object.__setattr__(self, "theta", _frozen(self.theta))
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "log_radius", _frozen(a))
        object.__setattr__(self, "nodes", _frozen(x))
        object.__setattr__(self, "psi_values", _frozen(reference_potential(x)))

    @property
    def shape(self):
        return (self.s.size, self.theta.size)

    @property
    def size(self):
        return self.nodes.size

    @property
    def capacity(self):
        """Largest degree k whose Gram integrals are reproduced exactly."""
        if self.kind != "gauss":
            return 0
        return min(self.s.size, self.theta.size) - 1

    def require_capacity(self, k):
        if k > self.capacity:
            raise CapacityError(
                f"sphere grid {self.shape} integrates degree <= {self.capacity}, "
                f"need k = {k} (use n_radial, n_angular >= {k + 1})"
            )

    @property
    def axes(self):
        """Grid coordinates used for interpolation: (log|x|, arg x)."""
        return (self.log_radius, self.theta)

    @property
    def periodic(self):
        return (False, True)

    def coords_of(self, x):
        x = np.asarray(x, dtype=complex)
        return np.stack([np.log(np.abs(x)), np.mod(np.angle(x), 2 * np.pi)], axis=-1)

    def integrate(self, values):
        """Quadrature against ``omega_hat`` over the trailing node axis."""
        return np.asarray(values) @ self.weights

    def fiber_sections(self, k):
        """``x^j (1 + |x|^2)^(-k/2)`` at every node, shape (size, k + 1).

        Computed from ``s`` directly so nodes near infinity stay accurate.
        """
        j = np.arange(k + 1)
        ls = np.log(self.s)[:, None]
        l1 = np.log1p(-self.s)[:, None]
        mod = np.exp(0.5 * j * ls + 0.5 * (k - j) * l1)
        ph = np.exp(1j * np.outer(self.theta, j))
        return (mod[:, None, :] * ph[None, :, :]).reshape(-1, k + 1)


def build_sphere_grid(n_radial, n_angular):
    """Gauss-Legendre in ``s`` times uniform angles.

    Exact for every integrand ``s^a (1 - s)^b e^{i q theta}`` with
    ``a + b <= 2 n_radial - 1`` and ``|q| < n_angular``; in particular all
    Gram entries for ``k <= min(n_radial, n_angular) - 1``.
    """
    if n_radial < 4 or n_angular < 4:
        raise CapacityError("sphere grid needs n_radial >= 4 and n_angular >= 4")
    return _gauss_grid(n_radial, n_angular)


def _gauss_grid(n_radial, n_angular):
    t, w = leggauss(n_radial)
    s = 0.5 * (t + 1.0)
    ws = 0.5 * w
    theta = 2 * np.pi * np.arange(n_angular) / n_angular
    weights = np.outer(ws, np.full(n_angular, 1.0 / n_angular)).ravel()
    return SphereGrid(s, theta, weights, kind="gauss")


def symmetric_sphere_grid(n_radial):
    """Rotation-reduced grid (a single angle) for S^1-invariant fields."""
    return _gauss_grid(n_radial, 1)


def build_chart_grid(n_radial, n_angular, log_radius_max=3.0):
    """Uniform grid in ``(log|x|, arg x)`` for finite differences.

    Covers ``e^-A <= |x| <= e^A``. The weights are trapezoidal and only
    approximate ``omega_hat``; use :func:`build_sphere_grid` for integrals.
    """
    if n_radial < 4 or n_angular < 1:
        raise CapacityError("chart grid needs n_radial >= 4")
    a = np.linspace(-log_radius_max, log_radius_max, n_radial)
    s = 1.0 / (1.0 + np.exp(-2 * a))
    ds = 2 * s * (1 - s)
    tw = np.full(n_radial, a[1] - a[0])
    tw[[0, -1]] *= 0.5
    theta = 2 * np.pi * np.arange(n_angular) / n_angular
    weights = np.outer(tw * ds, np.full(n_angular, 1.0 / n_angular)).ravel()
    return SphereGrid(s, theta, weights, kind="chart")


class DomainGrid:
    """Structured grid on the base domain D in C^m.

    Node arrays have shape ``self.shape``; axes ``2j`` and ``2j + 1`` are the
    computational coordinates of ``z_j``. On those coordinates ``z_j`` is
    holomorphic in ``w_j = axis_{2j} + i axis_{2j+1}``, and ``jac[..., j]``
    is ``dw_j/dz_j``, so ``d_{z_j} = jac * d_{w_j}``.

    Use :meth:`annulus`, :meth:`disc` or :meth:`bidisc` to construct.
    """

    def __init__(self, kind, m, axes, periodic, z, jac, domain, interior, **params):
        self.kind = kind
        self.m = m
        self.axes = tuple(_frozen(a) for a in axes)
        self.periodic = tuple(periodic)
        self.shape = tuple(a.size for a in self.axes)
        self.spacing = tuple(
            (a[1] - a[0]) if a.size > 1 else 2 * np.pi for a in self.axes
        )
        self.z = _frozen(z)
        self.jac = _frozen(jac)
        self.domain = _frozen(domain)
        self.interior = _frozen(interior & domain)
        self.boundary = _frozen(domain & ~interior)
        self.params = params
        flat = np.arange(int(np.prod(self.shape))).reshape(self.shape)
        self.interior_index = _frozen(flat[self.interior])
        self.boundary_index = _frozen(flat[self.boundary])
        self.zeta = _frozen(self._project(self.z[self.boundary]))
        if kind != "annulus" and not domain.all():
            tree = cKDTree(np.argwhere(domain))
            _, near = tree.query(np.argwhere(~domain))
            self._fill_src = flat[domain][near]
            self._fill_dst = flat[~domain]
        else:
            self._fill_src = self._fill_dst = np.zeros(0, dtype=int)

    # -- constructors ---------------------------------------------------
    @classmethod
    def annulus(cls, r0, n_radial, n_angular):
        """``{r0 <= |z| <= 1}`` on a log-polar grid ``z = exp(t + i theta)``.

        Boundary nodes lie exactly on both circles. ``n_angular = 1`` gives the
        rotation-reduced grid for S^1-invariant problems.
        """
        if not 0 < r0 < 1:
            raise ValueError("annulus needs 0 < r0 < 1")
        if n_radial < 3:
            raise ValueError("annulus needs n_radial >= 3")
        t = np.linspace(np.log(r0), 0.0, n_radial)
        th = 2 * np.pi * np.arange(n_angular) / n_angular
        T, TH = np.meshgrid(t, th, indexing="ij")
        z = np.exp(T + 1j * TH)[..., None]
        domain = np.ones(z.shape[:-1], dtype=bool)
        interior = domain.copy()
        interior[[0, -1], :] = False
        return cls("annulus", 1, (t, th), (False, True), z, 1.0 / z, domain,
                   interior, r0=r0)

    @classmethod
    def disc(cls, n):
        """Unit disc on an ``n x n`` Cartesian grid of ``[-1, 1]^2``.

        Boundary nodes are the in-disc nodes lacking a full stencil; their
        data are sampled at the radial projection onto the circle.
        """
        g = np.linspace(-1.0, 1.0, n)
        X, Y = np.meshgrid(g, g, indexing="ij")
        z = (X + 1j * Y)[..., None]
        domain = np.abs(z[..., 0]) <= 1 + 1e-12
        interior = domain & _all_neighbors(domain)
        return cls("disc", 1, (g, g), (False, False), z, np.ones_like(z), domain,
                   interior)

    @classmethod
    def bidisc(cls, n):
        """Unit bidisc in C^2 on an ``n^4`` Cartesian grid.

        Boundary nodes sample the full topological boundary
        ``(dD x D) u (D x dD)``.
        """
        g = np.linspace(-1.0, 1.0, n)
        A = np.meshgrid(g, g, g, g, indexing="ij")
        z = np.stack([A[0] + 1j * A[1], A[2] + 1j * A[3]], axis=-1)
        domain = (np.abs(z) <= 1 + 1e-12).all(axis=-1)
        interior = domain & _all_neighbors(domain)
        return cls("bidisc", 2, (g, g, g, g), (False,) * 4, z, np.ones_like(z),
                   domain, interior)

    # -- geometry -------------------------------------------------------
    def _project(self, zb):
        if self.kind == "annulus":
            r = np.abs(zb[:, 0])
            r0 = self.params["r0"]
            rad = np.where(np.abs(r - r0) < np.abs(r - 1.0), r0, 1.0)
            return (rad * zb[:, 0] / r)[:, None]
        out = zb.copy()
        j = np.argmax(np.abs(zb), axis=1)
        rows = np.arange(zb.shape[0])
        zj = zb[rows, j]
        out[rows, j] = zj / np.abs(zj)
        return out

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def n_boundary(self):
        return self.boundary_index.size

    def coords_of(self, z):
        """Computational coordinates of points ``z`` (shape (P, m))."""
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        if self.kind == "annulus":
            w = z[:, 0]
            return np.stack([np.log(np.abs(w)), np.mod(np.angle(w), 2 * np.pi)], axis=1)
        return np.stack([f(z[:, j]) for j in range(self.m) for f in (np.real, np.imag)],
                        axis=1)

    def contains(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        if self.kind == "annulus":
            r = np.abs(z[:, 0])
            return (r >= self.params["r0"] - 1e-12) & (r <= 1 + 1e-12)
        return (np.abs(z) <= 1 + 1e-12).all(axis=1)

    def dist_to_boundary(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        if self.kind == "annulus":
            r = np.abs(z[:, 0])
            return np.minimum(r - self.params["r0"], 1.0 - r)
        return (1.0 - np.abs(z)).min(axis=1)

    def cell_size(self):
        """Physical cell size at each node (shape ``self.shape``)."""
        if self.kind == "annulus":
            return self.spacing[0] * np.abs(self.z[..., 0])
        return np.full(self.shape, self.spacing[0])

    def volume_weights(self):
        """Crude nodal weights for ``int_D dV`` (zero outside D)."""
        if self.kind == "annulus":
            tw = np.full(self.shape[0], self.spacing[0])
            tw[[0, -1]] *= 0.5
            w = tw[:, None] * np.exp(2 * self.axes[0])[:, None] * (2 * np.pi / self.shape[1])
            return np.broadcast_to(w, self.shape).copy()
        return np.where(self.domain, self.spacing[0] ** (2 * self.m), 0.0)

    def extend(self, values):
        """Copy nearest in-domain values onto out-of-domain nodes (in place).

        ``values`` is either node-shaped (``self.shape + tail``) or flat
        (``(self.size,) + tail``).
        """
        if self._fill_dst.size:
            if values.shape[:len(self.shape)] == self.shape:
                tail = values.shape[len(self.shape):]
            else:
                tail = values.shape[1:]
            flat = values.reshape((self.size,) + tail)
            flat[self._fill_dst] = flat[self._fill_src]
        return values

    def describe(self):
        d = {"kind": self.kind, "m": self.m, "shape": list(self.shape)}
        d.update({k: float(v) for k, v in self.params.items()})
        return d

    @classmethod
    def from_description(cls, d):
        if d["kind"] == "annulus":
            return cls.annulus(d["r0"], *d["shape"])
        if d["kind"] == "disc":
            return cls.disc(d["shape"][0])
        if d["kind"] == "bidisc":
            return cls.bidisc(d["shape"][0])
        raise PreconditionError(f"unknown domain kind {d['kind']!r}")


def _all_neighbors(mask):
    ok = mask.copy()
    for ax in range(mask.ndim):
        for step in (1, -1):
            sh = np.zeros_like(mask)
            src = [slice(None)] * mask.ndim
            dst = [slice(None)] * mask.ndim
            if step > 0:
                src[ax], dst[ax] = slice(1, None), slice(None, -1)
            else:
                src[ax], dst[ax] = slice(None, -1), slice(1, None)
            sh[tuple(dst)] = mask[tuple(src)]
            ok &= sh
    return ok
