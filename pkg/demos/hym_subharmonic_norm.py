"""Solve the HYM system for non-commuting boundary data and test the dual norm.

The boundary data translate the reference potential by ``0.3 z``, so the
Gram matrices along the boundary do not commute. The solved dual metric
makes ``log |f|`` subharmonic for holomorphic sections ``f``; a noisy copy
of the metric does not.
"""
import numpy as np

from wzwlab.geometry import DomainGrid, build_sphere_grid, reference_potential
from wzwlab.hym import (
    HermitianMetricField,
    PolynomialSections,
    boundary_from_potentials,
    check_subharmonic_norm,
    solve_hym,
)

grid = DomainGrid.annulus(0.5, 32, 32)
sphere = build_sphere_grid(8, 8)


def v(zeta, x):
    return reference_potential(x + 0.3 * zeta[0]) - reference_potential(x)


H = solve_hym(boundary_from_potentials(3, v, grid, sphere), grid, tol=1e-9)
print(f"HYM residual {H.residual:.2e} after {H.iterations} iterations")
sections = PolynomialSections.random(200, H.rank, seed=1)
print(f"subharmonic-norm margin of the solution: {check_subharmonic_norm(H, sections):+.2e}")

rng = np.random.default_rng(0)
noise = rng.normal(size=H.values.shape) + 1j * rng.normal(size=H.values.shape)
noise = 0.5 * (noise + np.conj(np.swapaxes(noise, -1, -2)))
noisy = HermitianMetricField(grid, H.values + 1e-2 * np.abs(H.values).max() * noise, H.k)
print(f"margin after 1% Hermitian noise:        {check_subharmonic_norm(noisy, sections):+.2e}")
