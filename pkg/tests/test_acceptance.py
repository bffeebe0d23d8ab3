"""Acceptance criteria AC1 to AC7.

Each test prints one ``PASS``/``FAIL`` line for its criterion, including the
measured quantities, and then asserts it.
"""
import math
import time

import numpy as np
import pytest

from wzwlab import envelope, experiments, hym
from wzwlab.analysis import characteristic_form, mixed_hessian
from wzwlab.experiments import ExperimentConfig, run_convergence_study
from wzwlab.geometry import (
    DomainGrid,
    build_chart_grid,
    build_sphere_grid,
    psi_ddbar,
    reference_potential,
)

pytestmark = pytest.mark.acceptance

SHIPPED = {}


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def study(name):
    """Convergence study of a shipped preset, timed and cached per session."""
    if name not in SHIPPED:
        t = time.perf_counter()
        rep = run_convergence_study(ExperimentConfig.preset(name))
        SHIPPED[name] = (rep, time.perf_counter() - t)
    return SHIPPED[name]


def test_ac1_zero_data_closed_form(capsys):
    rep, seconds = study("constant")
    ks = [r["k"] for r in rep.rows]
    dev = max(abs(r["sup_error"] - math.log(r["k"] + 1) / r["k"]) for r in rep.rows)
    ok = ks == [1, 2, 4, 8, 16] and dev <= 1e-6 and seconds < 10
    report(capsys, "AC1 zero data", ok,
           f"max |error - log(k+1)/k| = {dev:.2e} over k = {ks}, {seconds:.1f} s")


def test_ac2_toric_convergence_trend(capsys):
    rep, seconds = study("toric-endpoints")
    cfg = rep.config
    e = rep.errors()
    ok = (cfg["z_resolution"] == [64, 64] and cfg["x_resolution"] == [64, 64]
          and cfg["ks"] == [4, 8, 16, 32] and rep.reference == "toric_geodesic_oracle"
          and bool(np.all(np.isfinite(e))) and bool(np.all(np.diff(e) < 0))
          and rep.fit["relative_residual"] < 0.3 and seconds < 300)
    report(capsys, "AC2 toric trend", ok,
           f"errors {np.array2string(e, precision=4)}, C = {rep.fit['C']:.3f}, "
           f"fit residual {rep.fit['relative_residual']:.3f}, {seconds:.0f} s")


def diagonal_annulus_error(n=32, c=(3.0, 0.2, 7.0), r0=0.5):
    g = DomainGrid.annulus(r0, n, n)
    inner = np.isclose(np.abs(g.zeta[:, 0]), r0)
    vals = np.where(inner[:, None, None], np.diag(c), np.eye(len(c))).astype(complex)
    H = hym.solve_hym(hym.BoundaryMetric(1, vals), g, tol=1e-10)
    r = np.abs(g.z.reshape(-1))
    exact = np.asarray(c)[None, :] ** (np.log(r) / np.log(r0))[:, None]
    d = np.einsum("nii->ni", H.values).real
    return float(np.abs(d / exact - 1).max()), H


def test_ac3_hym_solver(capsys):
    worst, monotone = 0.0, True
    for name in ("constant", "toric-endpoints", "analytic-formula"):
        rep, _ = study(name)
        worst = max(worst, max(r["hym_residual"] for r in rep.rows))
        monotone &= all(r["energy_monotone"] for r in rep.rows)
    err, H = diagonal_annulus_error()
    monotone &= H.energy_monotone
    ok = worst <= 1e-8 and monotone and err <= 1e-8
    report(capsys, "AC3 HYM solver", ok,
           f"max relative residual {worst:.2e} on shipped configs, energy monotone "
           f"{monotone}, harmonic-interpolation error {err:.2e}")


def noncommuting_metric(n, k=3, c=0.3):
    g = DomainGrid.annulus(0.5, n, n)
    sg = build_sphere_grid(8, 8)

    def v(zeta, x):
        return reference_potential(x + c * zeta[0]) - reference_potential(x)

    return hym.solve_hym(hym.boundary_from_potentials(k, v, g, sg), g, tol=1e-9)


def test_ac4_subharmonic_norm(capsys):
    secs = hym.PolynomialSections.random(200, 4, seed=3)
    ns = (16, 32, 64)
    fields = {n: noncommuting_metric(n) for n in ns}
    margin = hym.check_subharmonic_norm(fields[64], secs, probe_radius=0.1)
    # refinement of the negative part with linear interpolation
    neg = np.array([-min(0.0, hym.check_subharmonic_norm(
        fields[n], secs, probe_radius=0.1, interp_order=1)) for n in ns])
    order = -np.polyfit(np.log(ns), np.log(neg), 1)[0] if np.all(neg > 0) else np.inf
    ok = fields[64].residual <= 1e-8 and margin >= -1e-6 and order >= 1.8
    report(capsys, "AC4 subharmonic norm", ok,
           f"margin {margin:.2e} at 64^2 over 200 sections, negative part "
           f"{', '.join(f'{v:.2e}' for v in neg)} at {ns}, fitted order {order:.2f}")


def mollified_oracle_form(n):
    cfg = ExperimentConfig()
    outer, inner = cfg.boundary_family().endpoints()
    dg = DomainGrid.annulus(cfg.r0, n, n)
    sg = build_chart_grid(n, n)
    V = envelope.mollify_field(envelope.toric_geodesic_oracle(outer, inner, dg, sg),
                               2.0, 2.0, total=True)
    H = mixed_hessian(V)
    char = characteristic_form(H)[H.valid]
    scale = float(psi_ddbar(sg.nodes).max())
    return float(np.abs(char).max()) / scale, float(H.trailing[H.valid].min())


def test_ac5_degeneracy_of_the_geodesic(capsys):
    ns = (16, 32, 64)
    forms, trailing = zip(*(mollified_oracle_form(n) for n in ns))
    ok = forms[-1] <= 5e-3 and bool(np.all(np.diff(forms) < 0)) and min(trailing) >= -1e-6
    report(capsys, "AC5 degeneracy", ok,
           f"sup |char form| / sup psi_xxbar = {', '.join(f'{f:.2e}' for f in forms)}"
           f" at {ns}, min trailing entry {min(trailing):.2e}")


def test_ac6_identity_suites(capsys):
    rng = np.random.default_rng(606)
    rows = experiments._analysis_suite(rng, n_fields=100)
    rows.append(experiments._regularized_max_suite(rng, n=100))
    failed = [r["suite"] for r in rows if not r["passed"]]
    by = {r["suite"]: r for r in rows}
    report(capsys, "AC6 identity suites", not failed,
           f"Schur {by['schur-identity']['max_relative_error']:.1e} on 100 fields, "
           f"regularized max {by['regularized-max']['max_violation']:.1e}, "
           f"bracket {by['poisson-antisymmetry-cyclic']['antisymmetry']:.1e} / "
           f"cyclic {by['poisson-antisymmetry-cyclic']['cyclic']:.1e}, "
           f"theta on repeated arguments {by['theta-repeated-zero']['margin']:.1e}"
           + (f", failed {failed}" if failed else ""))


def test_ac7_structure(capsys):
    rng = np.random.default_rng(707)
    order = experiments._quantization_suite(rng, n_pairs=50)
    env = experiments._envelope_suite(rng)
    kw = dict(z_resolution=[12, 4], x_resolution=[9, 9], ks=[2, 4, 8])
    base = run_convergence_study(ExperimentConfig.preset("toric-endpoints", **kw))
    moved = run_convergence_study(ExperimentConfig.preset(
        "toric-endpoints", boundary_params={"shift": -0.4}, **kw))
    shift = float(np.max(np.abs(base.errors() - moved.errors())))
    ok = order["passed"] and env["passed"] and shift <= 1e-10
    report(capsys, "AC7 structure", ok,
           f"50 ordered pairs: min H_k gap eigenvalue {order['min_eigenvalue']:.2e}, "
           f"min FS_k gap {order['min_fs_gap']:.2e}; envelope above majorant by "
           f"{env['max_above_majorant']:.1e}, max value {env['max_value']:.1e}; "
           f"pipeline shift error {shift:.1e}")
