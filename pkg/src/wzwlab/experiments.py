"""Configured end-to-end runs: the quantized convergence study and property suites.

The convergence study runs, for every degree ``k``,
``boundary_from_potentials -> solve_hym -> FS_k((V^k)^*)`` and compares the
result with a reference envelope on ``D x X``: the Legendre oracle when the
data are rotation invariant on an annulus, the graph sweep otherwise.
"""
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis, envelope, hym, quantization
from .errors import ConfigError, NonConvergenceError, WZWLabError
from .geometry import (
    DomainGrid,
    build_chart_grid,
    build_sphere_grid,
    reference_potential,
    symmetric_sphere_grid,
)

CSV_COLUMNS = ("k", "sup_error", "hym_residual", "iters", "seconds")

# -- boundary families -------------------------------------------------------------


def _bump(scale):
    """Rotation-invariant Kahler potential ``log((1 + a|x|^2) / (1 + |x|^2)) / 2``."""
    a = float(scale) ** 2
    return lambda x: 0.5 * np.log((1 + a * np.abs(x) ** 2) / (1 + np.abs(x) ** 2))


def _const(c):
    return lambda x: c + 0.0 * np.abs(x)


@dataclass(frozen=True)
class BoundaryFamily:
    """Boundary data ``v(zeta, x)`` built from a named preset.

    Presets
    -------
    ``"constant"``
        ``v = value``.
    ``"toric-endpoints"``
        ``phi_inner`` on ``|z| = r0`` and ``phi_outer`` on ``|z| = 1`` of an
        annulus, each ``shift + amplitude * log((1 + scale^2 |x|^2) /
        (1 + |x|^2)) / 2``; parameters ``inner_amplitude`` (default 1),
        ``outer_amplitude`` (0), ``scale`` (2) and ``shift`` (0).
    ``"analytic-formula"``
        ``v = shift + amplitude * Re(zeta_1) * (|x|^2 - 1) / (|x|^2 + 1)``.
    """

    name: str
    params: dict

    NAMES = ("constant", "toric-endpoints", "analytic-formula")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise ConfigError(f"unknown boundary family {self.name!r}; choose from {self.NAMES}")
        p = self.params
        if self.name == "analytic-formula" and not abs(p.get("amplitude", 0.3)) < 0.5:
            raise ConfigError("analytic-formula needs |amplitude| < 1/2 to stay Kahler")
        if self.name == "toric-endpoints":
            for key in ("inner_amplitude", "outer_amplitude"):
                if not 0.0 <= p.get(key, 0.0) <= 1.0:
                    raise ConfigError(f"{key} must lie in [0, 1]")

    @property
    def shift(self):
        return float(self.params.get("shift", self.params.get("value", 0.0)))

    def endpoints(self):
        """``(phi_outer, phi_inner)`` for the toric family."""
        p = self.params
        s, c = float(p.get("scale", 2.0)), self.shift
        out, inn = float(p.get("outer_amplitude", 0.0)), float(p.get("inner_amplitude", 1.0))
        b = _bump(s)
        return (lambda x: c + out * b(x)), (lambda x: c + inn * b(x))

    def function(self, dgrid):
        """``v(zeta, x)`` with ``zeta`` of shape (m,)."""
        if self.name == "constant":
            c = self.shift
            return lambda zeta, x: c + 0.0 * np.abs(x)
        if self.name == "toric-endpoints":
            outer, inner = self.endpoints()
            r0 = dgrid.params["r0"]

            def v(zeta, x):
                near_inner = abs(abs(zeta[0]) - r0) < abs(abs(zeta[0]) - 1.0)
                return inner(x) if near_inner else outer(x)

            return v
        a, c = float(self.params.get("amplitude", 0.3)), self.shift

        def v(zeta, x):
            ax = np.abs(x) ** 2
            return c + a * np.real(zeta[0]) * (ax - 1) / (ax + 1)

        return v


# -- configuration -------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything one run needs; JSON round-trippable.

    Attributes
    ----------
    domain : {"annulus", "disc", "bidisc"}
    r0 : float
        Inner radius of the annulus.
    z_resolution : list of int
        ``[n_radial, n_angular]`` for the annulus, ``[n]`` otherwise.
    x_resolution : list of int
        ``[n_radial, n_angular]`` of the Gauss sphere grid.
    ks : list of int
        Strictly increasing degrees.
    boundary : str
        Boundary family preset, see :class:`BoundaryFamily`.
    boundary_params : dict
    hym_tol, sweep_tol : float
    hym_max_iters, sweep_max : int
    graph_family : dict
        Keyword arguments of :class:`~wzwlab.envelope.HolomorphicGraphFamily`
        for the sweep reference.
    seed : int
    output_dir : str or None
    timing : bool
        Record wall time per ``k``; disable for byte-identical CSV output.
    """

    domain: str = "annulus"
    r0: float = 0.5
    z_resolution: list = field(default_factory=lambda: [64, 64])
    x_resolution: list = field(default_factory=lambda: [64, 64])
    ks: list = field(default_factory=lambda: [4, 8, 16, 32])
    boundary: str = "toric-endpoints"
    boundary_params: dict = field(default_factory=dict)
    hym_tol: float = 1e-8
    hym_max_iters: int = 50
    sweep_tol: float = 1e-7
    sweep_max: int = 5000
    graph_family: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = None
    timing: bool = True

    def __post_init__(self):
        self.z_resolution = [int(n) for n in self.z_resolution]
        self.x_resolution = [int(n) for n in self.x_resolution]
        self.ks = [int(k) for k in self.ks]
        self.boundary_params = dict(self.boundary_params)
        self.graph_family = dict(self.graph_family)
        self.validate()

    @property
    def m(self):
        return 2 if self.domain == "bidisc" else 1

    def validate(self):
        """Raise :class:`ConfigError` on any inconsistency."""
        if self.domain not in ("annulus", "disc", "bidisc"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.domain == "annulus":
            if not 0 < self.r0 < 1:
                raise ConfigError("annulus needs 0 < r0 < 1")
            if len(self.z_resolution) != 2 or self.z_resolution[0] < 3 or self.z_resolution[1] < 1:
                raise ConfigError("annulus z_resolution must be [n_radial >= 3, n_angular >= 1]")
        elif len(self.z_resolution) != 1 or self.z_resolution[0] < 5:
            raise ConfigError(f"{self.domain} z_resolution must be [n >= 5]")
        if len(self.x_resolution) != 2 or min(self.x_resolution) < 4:
            raise ConfigError("x_resolution must be [n_radial >= 4, n_angular >= 4]")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError("ks must be a nonempty list of positive integers")
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ConfigError("ks must be strictly increasing")
        cap = min(self.x_resolution) - 1
        if self.ks[-1] > cap:
            raise ConfigError(f"x_resolution {self.x_resolution} integrates degree <= {cap}, "
                              f"but ks reaches {self.ks[-1]}")
        if self.boundary == "toric-endpoints" and self.domain != "annulus":
            raise ConfigError("toric-endpoints data live on an annulus")
        for name in ("hym_tol", "sweep_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        BoundaryFamily(self.boundary, self.boundary_params)

    # -- construction ------------------------------------------------------------
    PRESETS = {
        "toric-endpoints": {},
        "constant": {"z_resolution": [16, 16], "x_resolution": [17, 17],
                     "ks": [1, 2, 4, 8, 16], "boundary": "constant"},
        "analytic-formula": {"domain": "disc", "z_resolution": [11], "x_resolution": [9, 9],
                             "ks": [2, 4, 8], "boundary": "analytic-formula",
                             "boundary_params": {"amplitude": 0.3},
                             "graph_family": {"magnitudes": [0.5, 1.0], "n_directions": 4,
                                              "radii": [2.0, 4.0], "slope_radii": [2.0, 4.0],
                                              "n_circle": 8}},
    }

    @classmethod
    def preset(cls, name, **overrides):
        if name not in cls.PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(cls.PRESETS)}")
        return cls(**{**cls.PRESETS[name], **overrides})

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        preset = d.pop("preset", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls.preset(preset, **d) if preset else cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    # -- grids -------------------------------------------------------------------
    def domain_grid(self):
        if self.domain == "annulus":
            return DomainGrid.annulus(self.r0, *self.z_resolution)
        return getattr(DomainGrid, self.domain)(self.z_resolution[0])

    def sphere_grid(self):
        return build_sphere_grid(*self.x_resolution)

    def boundary_family(self):
        return BoundaryFamily(self.boundary, self.boundary_params)

    def rng(self):
        return np.random.default_rng(self.seed)


# -- convergence study -----------------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Per-degree errors against the reference envelope and the fitted rate.

    ``rows`` hold ``k, sup_error, hym_residual, iters, seconds`` and, for a
    failed degree, ``error`` (stage-tagged message) with NaN metrics.
    ``fit`` holds ``C`` of ``sup_error ~ C log k / k`` and the relative
    residual of that least-squares fit (``k = 1`` rows, where ``log k = 0``,
    are excluded).
    """

    config: dict
    reference: str
    rows: list
    fit: dict

    def errors(self):
        return np.array([r["sup_error"] for r in self.rows], dtype=float)

    def to_dict(self):
        return {"config": self.config, "reference": self.reference, "rows": self.rows,
                "fit": self.fit}

    def write(self, out_dir):
        """Write ``report.json`` and ``errors.csv`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
        with open(out / "errors.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r["k"]] + [_fmt(r[c]) for c in CSV_COLUMNS[1:]])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def fit_log_rate(ks, errors):
    """Least-squares ``C`` in ``error ~ C log k / k`` and its relative residual."""
    ks = np.asarray(ks, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = (ks > 1) & np.isfinite(e)
    if keep.sum() < 1:
        return {"C": float("nan"), "relative_residual": float("nan"), "n": 0}
    g = np.log(ks[keep]) / ks[keep]
    C = float(np.dot(g, e[keep]) / np.dot(g, g))
    res = float(np.linalg.norm(e[keep] - C * g) / np.linalg.norm(e[keep]))
    return {"C": C, "relative_residual": res, "n": int(keep.sum())}


class StageError(WZWLabError):
    """Error raised inside a named pipeline stage."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(name, exc) from exc


def sweep_envelope(config, dgrid, sgrid):
    """Graph-sweep envelope of the configured boundary data."""
    opts = {k: tuple(v) if isinstance(v, list) else v for k, v in config.graph_family.items()}
    try:
        family = envelope.HolomorphicGraphFamily(dgrid, sgrid, **opts)
    except TypeError as exc:
        raise ConfigError(f"bad graph_family options: {exc}") from exc
    return _stage("envelope", envelope.graph_sweep_envelope,
                  config.boundary_family().function(dgrid), family,
                  tol=config.sweep_tol, max_sweeps=config.sweep_max)


def reference_envelope(config, dgrid, sgrid):
    """``(PotentialField, label)`` of the envelope the quantized fields approach."""
    fam = config.boundary_family()
    if config.domain == "annulus" and fam.name in ("constant", "toric-endpoints"):
        outer, inner = (fam.endpoints() if fam.name == "toric-endpoints"
                        else (_const(fam.shift), _const(fam.shift)))
        # the oracle puts its first potential on |z| = 1
        return _stage("oracle", envelope.toric_geodesic_oracle, outer, inner, dgrid,
                      sgrid), "toric_geodesic_oracle"
    return sweep_envelope(config, dgrid, sgrid), "graph_sweep_envelope"


def quantized_potential(k, v, dgrid, sgrid, tol=1e-8, max_iters=50):
    """``FS_k((V^k)^*)`` on all domain nodes and the solved metric field."""
    B = _stage("boundary", hym.boundary_from_potentials, k, v, dgrid, sgrid)
    H = _stage("hym", hym.solve_hym, B, dgrid, tol=tol, max_iters=max_iters)
    dom = dgrid.domain.ravel()
    fs = np.full((dgrid.size, sgrid.size), np.nan)
    fs[dom] = _stage("fubini_study", quantization.fubini_study_of_dual, k,
                     H.values[dom], sgrid.nodes)
    return fs, H


def run_convergence_study(config):
    """Quantized pipeline for every ``k`` against the reference envelope.

    A failure at one ``k`` (non-convergence included) is recorded in that row
    and the study continues; a failure of the reference envelope aborts.
    Writes ``report.json`` and ``errors.csv`` when ``config.output_dir`` is
    set.

    Returns
    -------
    ConvergenceReport
    """
    config.validate()
    dg, sg = config.domain_grid(), config.sphere_grid()
    V, label = reference_envelope(config, dg, sg)
    v = config.boundary_family().function(dg)
    dom = dg.domain.ravel()
    rows = []
    for k in config.ks:
        t0 = time.perf_counter()
        row = {"k": k}
        try:
            fs, H = quantized_potential(k, v, dg, sg, config.hym_tol, config.hym_max_iters)
            row.update(sup_error=float(np.max(np.abs(fs[dom] - V.values[dom]))),
                       hym_residual=float(H.residual), iters=int(H.iterations),
                       energy_monotone=bool(H.energy_monotone))
        except StageError as exc:
            hist = getattr(exc.cause, "history", None)
            row.update(sup_error=float("nan"), iters=len(hist) - 1 if hist else -1,
                       hym_residual=float(hist[-1]) if hist else float("nan"),
                       error=str(exc),
                       non_convergence=isinstance(exc.cause, NonConvergenceError))
        row["seconds"] = round(time.perf_counter() - t0, 3) if config.timing else 0.0
        rows.append(row)
    report = ConvergenceReport(config.to_dict(), label, rows,
                               fit_log_rate(config.ks, [r["sup_error"] for r in rows]))
    if config.output_dir:
        report.write(config.output_dir)
    return report


# -- property suites ---------------------------------------------------------------------


def _suite(name, margin, passed, **detail):
    return {"suite": name, "passed": bool(passed), "margin": float(margin), **detail}


def _smooth_triple(rng, n=3):
    out = []
    for a0, a1, a2, b, c in rng.normal(size=(n, 5)):
        def f(x, a0=a0, a1=a1, a2=a2, b=b, c=c):
            s = np.abs(x) ** 2 / (1 + np.abs(x) ** 2)
            t = np.angle(x)
            return a0 + a1 * s + a2 * s**2 + s * (1 - s) * (b * np.cos(2 * t) + c * np.sin(2 * t))
        out.append(f)
    return out


def _random_potential(rng, scale=0.08):
    a = rng.normal(size=4) * scale

    def phi(x):
        s = np.abs(x) ** 2 / (1 + np.abs(x) ** 2)
        t = np.angle(x)
        return a[0] + a[1] * s + a[2] * s**2 + a[3] * s * (1 - s) * np.cos(2 * t)

    return phi


def _quadrature_suite(rng):
    g = build_sphere_grid(17, 17)
    worst = 0.0
    for k in (1, 4, 16):
        G = quantization.hilbert_map(k, np.zeros(g.size), g).entries
        beta = np.array([math.factorial(j) * math.factorial(k - j) / math.factorial(k + 1)
                         for j in range(k + 1)])
        worst = max(worst, float(np.abs(G - np.diag(beta)).max()))
    return _suite("quadrature-beta", 1e-10 - worst, worst <= 1e-10, max_error=worst)


def _quantization_suite(rng, n_pairs=50):
    grid = build_sphere_grid(8, 8)
    k = 6
    worst_psd, worst_fs = np.inf, np.inf
    for _ in range(n_pairs):
        lo = _random_potential(rng)(grid.nodes)
        hi = lo + np.abs(_random_potential(rng)(grid.nodes)) + 0.05
        Glo = quantization.hilbert_map(k, lo, grid)
        Ghi = quantization.hilbert_map(k, hi, grid)
        ev = np.linalg.eigvalsh(Glo.entries - Ghi.entries)[0] / np.abs(Glo.entries).max()
        d = (quantization.fubini_study(k, Ghi, grid.nodes)
             - quantization.fubini_study(k, Glo, grid.nodes)).min()
        worst_psd, worst_fs = min(worst_psd, ev), min(worst_fs, d)
    margin = min(worst_psd + 1e-14, worst_fs + 1e-12)
    return _suite("hilbert-monotone-fs-order-reversing", margin, margin >= 0,
                  pairs=n_pairs, min_eigenvalue=worst_psd, min_fs_gap=worst_fs)


def _hym_field(rng, k=3, n=24):
    grid = DomainGrid.annulus(0.5, n, n)
    sg = build_sphere_grid(8, 8)
    c = 0.3 * np.exp(2j * np.pi * rng.uniform())

    def v(zeta, x):
        return reference_potential(x + c * zeta[0]) - reference_potential(x)

    B = hym.boundary_from_potentials(k, v, grid, sg)
    return hym.solve_hym(B, grid, tol=1e-9, max_iters=60)


def _hym_suite(rng, n_sections=50):
    H = _hym_field(rng)
    secs = hym.PolynomialSections.random(n_sections, H.rank, seed=int(rng.integers(2**31)))
    margin = hym.check_subharmonic_norm(H, secs)
    ok = H.residual <= 1e-9 and margin >= -1e-6
    # negative control: Hermitian noise of size 1e-2 must be detected
    noise = rng.normal(size=H.values.shape) + 1j * rng.normal(size=H.values.shape)
    noise = 0.5 * (noise + np.conj(np.swapaxes(noise, -1, -2)))
    scale = np.abs(H.values).max()
    bad = hym.HermitianMetricField(H.grid, H.values + 1e-2 * scale * noise, H.k)
    control = hym.check_subharmonic_norm(bad, secs)
    return [
        _suite("hym-subharmonic-norm", margin + 1e-6, ok, residual=H.residual,
               energy_monotone=H.energy_monotone),
        _suite("negative-control-noisy-metric", -1e-6 - control, control < -1e-6,
               perturbed_margin=control),
    ]


def _regularized_max_suite(rng, n=20):
    worst = 0.0
    for _ in range(n):
        xi = rng.uniform(0.5, 1.5, size=2)
        t = rng.normal(size=2) * 0.5
        M = envelope.regularized_max(xi, t)
        c = rng.normal()
        worst = max(worst,
                    max(0.0, t.max() - M),
                    max(0.0, M - (t + xi).max()),
                    abs(envelope.regularized_max(xi, t + c) - (M + c)),
                    abs(envelope.regularized_max(xi[::-1], t[::-1]) - M))
        far = np.array([0.0, -3.0 * xi.sum()])
        worst = max(worst, abs(envelope.regularized_max(xi, far) - 0.0))
    return _suite("regularized-max", 1e-10 - worst, worst <= 1e-10, max_violation=worst)


def _envelope_suite(rng):
    dg = DomainGrid.annulus(0.5, 17, 1)
    sg = symmetric_sphere_grid(16)
    fam = envelope.HolomorphicGraphFamily(dg, sg, magnitudes=(0.5, 1.0), n_directions=4,
                                          radii=(2.0, 4.0), slope_radii=(2.0, 4.0))
    a = 0.2 + 0.4 * rng.uniform()
    b = _bump(2.0)

    def v(zeta, x):
        return -a * b(x) if abs(abs(zeta[0]) - 0.5) < 0.25 else 0.0 * np.abs(x)

    V = envelope.graph_sweep_envelope(v, fam, tol=1e-8)
    h = envelope.harmonic_majorant(v, dg, sg)
    c = rng.normal()
    Vc = envelope.graph_sweep_envelope(lambda z, x: v(z, x) + c, fam, tol=1e-8)
    dom = dg.domain.ravel()
    above = float(np.max(V.values[dom] - h.values[dom]))
    positive = float(np.max(V.values[dom]))
    shift = float(np.max(np.abs(Vc.values[dom] - V.values[dom] - c)))
    margin = min(-above, -positive, 1e-6 - shift)
    return _suite("envelope-majorant-negativity-shift", margin, margin >= -1e-12,
                  max_above_majorant=above, max_value=positive, shift_error=shift)


def _analysis_suite(rng, n_fields=20):
    dg = DomainGrid.disc(11)
    sg = build_chart_grid(12, 8, 1.5)
    z = dg.z.reshape(-1)[:, None]
    x = sg.nodes[None, :]
    q = np.abs(x) ** 2 / (1 + np.abs(x) ** 2)
    r = x / (1 + np.abs(x) ** 2)
    worst_schur = 0.0
    for c in rng.normal(size=(n_fields, 4)) * 0.2:
        vals = (c[0] * np.abs(z) ** 2 + c[1] * np.real(z**2) + c[2] * np.real(z * np.conj(r))
                + c[3] * np.abs(z) ** 2 * q) * np.ones((dg.size, sg.size))
        H = analysis.mixed_hessian(envelope.PotentialField(dg, sg, vals))
        K, ch = analysis.k_density(H), analysis.characteristic_form(H)
        v = H.valid
        worst_schur = max(worst_schur, float(np.abs(K[v] * H.trailing[v] - ch[v]).max()
                                             / np.abs(ch[v]).max()))
    g = build_sphere_grid(16, 8)
    worst_cyc = worst_anti = worst_theta = 0.0
    for _ in range(n_fields):
        a, b, c = _smooth_triple(rng)
        phi = 0.05 * _smooth_triple(rng, 1)[0](g.nodes)
        w = g.weights * analysis.density_ratio(phi, g)
        ab = analysis.poisson_bracket(phi, a, b, g)
        bc = analysis.poisson_bracket(phi, b, c, g)
        worst_anti = max(worst_anti, float(np.abs(ab + analysis.poisson_bracket(phi, b, a, g)).max()))
        left, right = np.sum(w * ab * c(g.nodes)), np.sum(w * a(g.nodes) * bc)
        worst_cyc = max(worst_cyc, float(abs(left - right) / max(1.0, abs(left))))
        worst_theta = max(worst_theta, abs(analysis.theta_form(phi, a, a, b, g)),
                          abs(analysis.theta_form(phi, a, b, b, g)),
                          abs(analysis.theta_form(phi, b, a, b, g)))
    return [
        _suite("schur-identity", 1e-10 - worst_schur, worst_schur <= 1e-10, fields=n_fields,
               max_relative_error=worst_schur),
        _suite("poisson-antisymmetry-cyclic", 1e-8 - max(worst_cyc, worst_anti),
               max(worst_cyc, worst_anti) <= 1e-8, cyclic=worst_cyc, antisymmetry=worst_anti),
        _suite("theta-repeated-zero", -worst_theta, worst_theta == 0.0),
    ]


def hessian_richardson_slopes(base):
    """Observed orders of the mixed Hessian at ``base, 2 base, 4 base`` cells.

    Uses the analytic field ``Re(z^2 xbar) exp(-|x|^2) + |z x|^2`` at the
    node ``z = 1/2, |x| = 1`` shared by all three grids.
    """
    def fn(z, x):
        return np.real(z**2 * np.conj(x)) * np.exp(-np.abs(x) ** 2) + np.abs(z * x) ** 2

    errs = []
    for n in (base + 1, 2 * base + 1, 4 * base + 1):
        dg = DomainGrid.disc(n)
        sg = build_chart_grid(n, n - 1, 1.0)
        z = dg.z.reshape(-1)[:, None]
        x = sg.nodes[None, :]
        vals = fn(z, x) * np.ones((dg.size, sg.size))
        H = analysis.mixed_hessian(envelope.PotentialField(dg, sg, vals))
        i = int(np.argmin(np.abs(z[:, 0] - 0.5)))
        j = int(np.argmin(np.abs(x[0] - 1.0)))
        zi, xj = z[i, 0], x[0, j]
        exact = zi * np.exp(-abs(xj) ** 2) * (1 - abs(xj) ** 2) + np.conj(zi) * xj
        errs.append(abs(H.off_diagonal[i, j, 0] - exact))
    return np.log2(np.array(errs[:-1]) / np.array(errs[1:]))


def _richardson_suite(base=16, tol=0.5):
    out = []
    for label, b in (("richardson-full", base), ("richardson-half", base // 2)):
        slopes = hessian_richardson_slopes(b)
        dev = float(np.max(np.abs(slopes - 2.0)))
        out.append(_suite(label, tol - dev, dev <= tol, slopes=slopes.tolist()))
    return out


SUITES = ("quadrature", "quantization", "hym", "regularized_max", "envelope", "analysis",
          "richardson")


def run_property_suites(config, suites=SUITES):
    """Run the invariant suites of every module with the configured seed.

    Failures are data: each suite reports ``passed`` and a signed ``margin``
    (positive when passing). Writes ``properties.json`` when
    ``config.output_dir`` is set.

    Returns
    -------
    dict
        ``{"seed", "passed", "suites": [...]}``.
    """
    rng = config.rng()
    runners = {
        "quadrature": _quadrature_suite,
        "quantization": _quantization_suite,
        "hym": _hym_suite,
        "regularized_max": _regularized_max_suite,
        "envelope": _envelope_suite,
        "analysis": _analysis_suite,
        "richardson": lambda r: _richardson_suite(),
    }
    results = []
    for name in suites:
        child = np.random.default_rng(rng.integers(2**63))
        try:
            res = runners[name](child)
        except WZWLabError as exc:
            res = _suite(name, float("-inf"), False, error=f"{type(exc).__name__}: {exc}")
        results.extend(res if isinstance(res, list) else [res])
    summary = {"seed": config.seed, "passed": all(r["passed"] for r in results),
               "suites": results}
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "properties.json", "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
    return summary
