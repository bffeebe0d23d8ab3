import json
import math

import numpy as np
import pytest

from wzwlab.cli import main
from wzwlab.errors import ConfigError
from wzwlab.experiments import (
    CSV_COLUMNS,
    ExperimentConfig,
    fit_log_rate,
    hessian_richardson_slopes,
    run_convergence_study,
    run_property_suites,
)


# -- config ---------------------------------------------------------------------------


@pytest.mark.parametrize("bad", [
    {"ks": [4, 4]},
    {"ks": [8, 4]},
    {"ks": []},
    {"ks": [64]},
    {"domain": "torus"},
    {"r0": 1.5},
    {"z_resolution": [9]},
    {"domain": "disc", "z_resolution": [9, 9], "boundary": "constant"},
    {"domain": "disc", "z_resolution": [9]},
    {"boundary": "mystery"},
    {"boundary": "analytic-formula", "boundary_params": {"amplitude": 0.9}},
    {"hym_tol": 0},
    {"seed": -1},
])
def test_invalid_configs_are_rejected(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_config_round_trip_and_presets(tmp_path):
    cfg = ExperimentConfig.preset("analytic-formula", seed=7)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"nonsense": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.preset("nope")
    assert ExperimentConfig.from_dict({"preset": "constant"}).ks == [1, 2, 4, 8, 16]


def test_fit_of_exact_rate():
    ks = [2, 4, 8, 16]
    fit = fit_log_rate(ks, [1.7 * math.log(k) / k for k in ks])
    assert fit["C"] == pytest.approx(1.7, rel=1e-12)
    assert fit["relative_residual"] < 1e-12


# -- convergence study ------------------------------------------------------------------


def small(name="constant", **kw):
    base = {"constant": dict(z_resolution=[8, 8], x_resolution=[9, 9], ks=[1, 2, 4, 8])}
    return ExperimentConfig.preset(name, **{**base.get(name, {}), **kw})


def test_zero_data_reproduce_closed_form(tmp_path):
    rep = run_convergence_study(small(output_dir=str(tmp_path)))
    for row in rep.rows:
        assert row["sup_error"] == pytest.approx(math.log(row["k"] + 1) / row["k"], abs=1e-12)
    header = (tmp_path / "errors.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["reference"] == "toric_geodesic_oracle"
    assert report["config"]["ks"] == [1, 2, 4, 8]


def test_constant_data_give_the_same_error_column():
    e0 = run_convergence_study(small()).errors()
    e1 = run_convergence_study(small(boundary_params={"value": 0.7})).errors()
    np.testing.assert_allclose(e1, e0, atol=1e-10)


def test_pipeline_is_shift_equivariant():
    kw = dict(z_resolution=[12, 4], x_resolution=[9, 9], ks=[2, 4, 8])
    a = run_convergence_study(ExperimentConfig.preset("toric-endpoints", **kw)).errors()
    b = run_convergence_study(ExperimentConfig.preset(
        "toric-endpoints", boundary_params={"shift": -0.4}, **kw)).errors()
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_fixed_seed_gives_byte_identical_csv(tmp_path):
    outs = []
    for i in range(2):
        cfg = ExperimentConfig.preset("analytic-formula", output_dir=str(tmp_path / str(i)),
                                      timing=False, seed=11)
        run_convergence_study(cfg)
        outs.append((tmp_path / str(i) / "errors.csv").read_bytes())
    assert outs[0] == outs[1]


def test_sweep_reference_trend():
    rep = run_convergence_study(ExperimentConfig.preset("analytic-formula"))
    assert rep.reference == "graph_sweep_envelope"
    e = rep.errors()
    assert np.all(np.isfinite(e)) and np.all(np.diff(e) < 0)


def test_hym_failure_flags_only_that_row():
    cfg = ExperimentConfig.preset("analytic-formula", hym_tol=1e-300, hym_max_iters=0)
    rep = run_convergence_study(cfg)
    assert all(r.get("non_convergence") for r in rep.rows)
    assert all(r["error"].startswith("[hym]") for r in rep.rows)
    assert np.isnan(rep.errors()).all()


# -- property suites ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def suites():
    return run_property_suites(ExperimentConfig(seed=2024))


def test_property_suites_pass(suites):
    assert suites["passed"], [s for s in suites["suites"] if not s["passed"]]
    names = {s["suite"] for s in suites["suites"]}
    assert "negative-control-noisy-metric" in names


def test_negative_control_detects_noise(suites):
    control = next(s for s in suites["suites"] if s["suite"] == "negative-control-noisy-metric")
    assert control["perturbed_margin"] < -1e-6


def test_richardson_at_half_resolution():
    for base in (8, 16):
        slopes = hessian_richardson_slopes(base)
        assert np.all(np.abs(slopes - 2) < 0.5)


# -- command line -------------------------------------------------------------------------


def test_cli_commands(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["hilbert", "--k", "2", "--preset", "constant", "--out", out]) == 0
    G = json.loads((tmp_path / "hilbert_k2.json").read_text())
    np.testing.assert_allclose(np.array(G["real"]), np.diag([1 / 3, 1 / 6, 1 / 3]), atol=1e-14)
    assert main(["fs", "--k", "4", "--preset", "constant", "--out", out]) == 0
    assert json.loads((tmp_path / "fs_k4.json").read_text())["sup_gap"] == pytest.approx(
        math.log(5) / 4, abs=1e-12)
    assert main(["hym-solve", "--k", "2", "--preset", "analytic-formula", "--out", out]) == 0
    assert (tmp_path / "metric_k2.bin").exists()
    assert main(["envelope", "--preset", "analytic-formula", "--out", out]) == 0
    assert (tmp_path / "envelope.bin").exists()
    cfg = tmp_path / "toric.json"
    cfg.write_text(json.dumps({"z_resolution": [17, 1], "x_resolution": [17, 8],
                               "ks": [2, 4]}))
    assert main(["oracle", "--config", str(cfg), "--out", out, "--threads", "1"]) == 0
    assert main(["wzw-check", "--config", str(cfg), "--out", out]) == 0
    wzw = json.loads((tmp_path / "wzw_check.json").read_text())
    assert wzw["nodes"] > 0
    assert main(["converge", "--preset", "constant", "--out", out, "--seed", "3"]) == 0
    assert (tmp_path / "errors.csv").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"ks": [4, 2]}))
    assert main(["converge", "--config", str(bad)]) == 3
    assert main(["converge", "--preset", "nope"]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 3
    slow = tmp_path / "slow.json"
    slow.write_text(json.dumps({"preset": "analytic-formula", "sweep_max": 2}))
    assert main(["envelope", "--config", str(slow), "--out", str(tmp_path)]) == 2
    big = tmp_path / "big.json"
    big.write_text(json.dumps({"preset": "analytic-formula", "graph_family": {}}))
    assert main(["envelope", "--config", str(big), "--out", str(tmp_path)]) == 3
    assert main(["props", "--threads", "0"]) == 3
