import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wzwlab.errors import CapacityError, ConditioningError, PreconditionError
from wzwlab.geometry import build_sphere_grid, reference_potential
from wzwlab.quantization import (
    GramMatrix,
    dual_gram,
    fubini_study,
    hilbert_map,
    scaled_condition,
    tcz_gap,
)

GRID = build_sphere_grid(34, 34)


def translated(c):
    return lambda x: reference_potential(x + c) - reference_potential(x)


def smooth_potential(seed):
    """Small random Kahler potential: a few low modes, rotation-free."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=4) * 0.08
    b = rng.normal(size=2) * 0.08

    def phi(x):
        s = np.abs(x) ** 2 / (1 + np.abs(x) ** 2)
        t = np.angle(x)
        return (a[0] + a[1] * s + a[2] * s**2 + a[3] * np.cos(t) * np.sqrt(s * (1 - s))
                + b[0] * np.sin(2 * t) * s * (1 - s) + b[1] * s**3)

    return phi


def test_beta_examples():
    small = build_sphere_grid(4, 4)
    np.testing.assert_allclose(hilbert_map(1, 0.0, small).entries, np.diag([0.5, 0.5]),
                               atol=1e-14)
    np.testing.assert_allclose(hilbert_map(2, np.zeros(small.size), small).entries,
                               np.diag([1 / 3, 1 / 6, 1 / 3]), atol=1e-14)


def test_constant_shift_scales_gram():
    c = 0.7
    G0 = hilbert_map(1, lambda x: 0 * np.abs(x), GRID)
    G1 = hilbert_map(1, lambda x: c + 0 * np.abs(x), GRID)
    np.testing.assert_allclose(G1.entries, math.exp(-c) * G0.entries, rtol=1e-12, atol=1e-15)


def test_rotation_invariant_potential_gives_diagonal():
    phi = lambda x: 0.5 * np.log((1 + 4 * np.abs(x) ** 2) / (1 + np.abs(x) ** 2))
    G = hilbert_map(12, phi, GRID).entries
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() < 1e-12 * np.abs(G).max()
    fs = fubini_study(12, G, GRID.nodes).reshape(GRID.shape)
    assert np.ptp(fs, axis=1).max() < 1e-12


def test_non_kahler_is_rejected():
    with pytest.raises(PreconditionError):
        hilbert_map(2, lambda x: -2.0 * reference_potential(x), GRID)


def test_capacity_is_enforced():
    with pytest.raises(CapacityError):
        hilbert_map(8, 0.0 * build_sphere_grid(6, 6).psi_values, build_sphere_grid(6, 6))


def test_gram_matrix_is_hermitian_and_read_only():
    G = hilbert_map(5, translated(0.3 + 0.2j), GRID)
    assert np.array_equal(G.entries, G.entries.conj().T)
    assert G.min_eigenvalue() > 0
    with pytest.raises(ValueError):
        G.entries[0, 0] = 1.0


def test_dual_examples():
    D = dual_gram(GramMatrix(1, np.diag([2.0, 5.0])))
    np.testing.assert_allclose(D.entries, np.diag([0.5, 0.2]))
    assert D.basis == "dual"
    assert dual_gram(D).basis == "primal"


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8), c=st.floats(0.1, 10))
def test_dual_involution_and_homogeneity(seed, n, c):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n + 1, n + 1)) + 1j * rng.normal(size=(n + 1, n + 1))
    G = GramMatrix(n, A @ A.conj().T + 0.5 * np.eye(n + 1))
    back = dual_gram(dual_gram(G)).entries
    assert np.abs(back - G.entries).max() <= 1e-12 * np.abs(G.entries).max() * G.condition()
    np.testing.assert_allclose(dual_gram(G.scaled(c)).entries, dual_gram(G).entries / c,
                               rtol=1e-10, atol=1e-12 * np.abs(dual_gram(G).entries).max())


def test_singular_gram_raises():
    with pytest.raises(ConditioningError):
        dual_gram(GramMatrix(1, np.array([[1.0, 1.0], [1.0, 1.0 + 1e-16]])))


def test_scaled_condition_ignores_basis_scaling():
    G = hilbert_map(32, 0 * GRID.psi_values, GRID)
    assert scaled_condition(G.entries) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("k", [1, 2, 8, 32])
def test_fubini_study_of_unit_weight(k):
    G = hilbert_map(k, 0 * GRID.psi_values, GRID)
    fs = fubini_study(k, G, GRID.nodes)
    np.testing.assert_allclose(fs, math.log(k + 1) / k, atol=1e-12)


@pytest.mark.parametrize("k", [1, 4, 16])
def test_fubini_study_homogeneity(k):
    G = hilbert_map(k, translated(0.4), GRID)
    x = GRID.nodes
    np.testing.assert_allclose(fubini_study(k, G.scaled(3.0), x),
                               fubini_study(k, G, x) - math.log(3.0) / k, atol=1e-12)


def test_conjugation_convention_reproduces_the_potential():
    # the transposed realization would converge to phi(conj(x)) instead
    c = 0.4 + 0.3j
    phi = translated(c)
    G = hilbert_map(16, phi, GRID)
    x = GRID.nodes
    fs = fubini_study(16, G, x)
    good = np.abs(fs - phi(x)).max()
    bad = np.abs(fs - phi(np.conj(x))).max()
    assert good < 0.3 < 0.5 < bad


@pytest.mark.parametrize("c", [0.0, 1.3, -0.4])
def test_tcz_gap_of_constants(c):
    for k in (1, 4, 9):
        gap = tcz_gap(k, np.full(GRID.size, c), GRID)
        assert gap == pytest.approx(math.log(k + 1) / k, abs=1e-12)


def test_tcz_gap_trend():
    phi = lambda x: 0.5 * np.log((1 + 4 * np.abs(x) ** 2) / (1 + np.abs(x) ** 2))
    ks = [8, 16, 32]
    gaps = [tcz_gap(k, phi, GRID) for k in ks]
    assert gaps[0] > gaps[1] > gaps[2]
    ratios = [g / (math.log(k) / k) for g, k in zip(gaps, ks)]
    assert max(ratios) / min(ratios) < 3


@pytest.mark.parametrize("seed", range(50))
def test_monotonicity_and_order_reversal(seed):
    k = 6
    grid = build_sphere_grid(8, 8)
    phi = smooth_potential(seed)
    bump = smooth_potential(seed + 1000)
    lo = phi(grid.nodes)
    hi = lo + np.abs(bump(grid.nodes)) + 0.05
    G_lo = hilbert_map(k, lo, grid)
    G_hi = hilbert_map(k, hi, grid)
    diff = G_lo.entries - G_hi.entries
    assert np.linalg.eigvalsh(diff)[0] >= -1e-14 * np.abs(G_lo.entries).max()
    x = grid.nodes
    # the larger Gram matrix has the smaller Fubini-Study potential
    assert np.all(fubini_study(k, G_hi, x) >= fubini_study(k, G_lo, x) - 1e-12)
