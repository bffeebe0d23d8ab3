"""Command-line interface: ``python -m wzwlab <command> [options]``.

Exit codes: 0 success, 1 failed property suite or other error,
2 solver non-convergence, 3 invalid configuration, arguments or grid capacity.
"""
import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_NONCONVERGENCE, EXIT_CONFIG = 0, 1, 2, 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--preset", help="named config preset (toric-endpoints, constant, "
                        "analytic-formula)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--threads", type=int, default=None,
                        help="cap on BLAS/OpenMP threads")
    p = _Parser(prog="wzwlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    k_opt = dict(type=int, required=True, help="degree k")
    s = sub.add_parser("hilbert", parents=[common], help="Gram matrix H_k of a boundary slice")
    s.add_argument("--k", **k_opt)
    s = sub.add_parser("fs", parents=[common], help="FS_k(H_k(phi)) and its gap to phi")
    s.add_argument("--k", **k_opt)
    s = sub.add_parser("hym-solve", parents=[common], help="solve the HYM system for V^k")
    s.add_argument("--k", **k_opt)
    sub.add_parser("envelope", parents=[common], help="graph-sweep envelope of the data")
    sub.add_parser("oracle", parents=[common], help="Legendre geodesic oracle (toric data)")
    s = sub.add_parser("wzw-check", parents=[common],
                       help="characteristic form and WZW residual of a field")
    s.add_argument("--field", help="potential field dump (default: the oracle)")
    s.add_argument("--mollify", type=float, default=2.0,
                   help="mollification radius in cells (0 disables)")
    sub.add_parser("converge", parents=[common], help="quantized convergence study")
    sub.add_parser("props", parents=[common], help="property suites")
    return p


def _config(args):
    from .errors import ConfigError
    from .experiments import ExperimentConfig

    if args.config and args.preset:
        raise ConfigError("use either --config or --preset")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig.preset(args.preset or "toric-endpoints")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def _out_dir(cfg):
    out = Path(cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload):
    from .experiments import _jsonable

    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)


def _slice(cfg, dg):
    """Boundary potential at the first boundary node, as a function of x."""
    v = cfg.boundary_family().function(dg)
    zeta = dg.zeta[0]
    return lambda x: v(zeta, x), zeta


def _cmd_hilbert(cfg, args):
    from .quantization import hilbert_map, scaled_condition

    dg, sg = cfg.domain_grid(), cfg.sphere_grid()
    phi, zeta = _slice(cfg, dg)
    G = hilbert_map(args.k, phi, sg)
    out = _out_dir(cfg) / f"hilbert_k{args.k}.json"
    _write_json(out, {"k": args.k, "zeta": [[z.real, z.imag] for z in zeta],
                      "real": G.entries.real.tolist(), "imag": G.entries.imag.tolist(),
                      "scaled_condition": float(scaled_condition(G.entries))})
    print(f"H_{args.k}: size {args.k + 1}, min eigenvalue {G.min_eigenvalue():.6e} -> {out}")


def _cmd_fs(cfg, args):
    from .quantization import tcz_gap

    dg, sg = cfg.domain_grid(), cfg.sphere_grid()
    phi, _ = _slice(cfg, dg)
    gap = tcz_gap(args.k, phi, sg)
    out = _out_dir(cfg) / f"fs_k{args.k}.json"
    _write_json(out, {"k": args.k, "sup_gap": gap})
    print(f"sup |FS_{args.k}(H_{args.k}(phi)) - phi| = {gap:.6e} -> {out}")


def _cmd_hym(cfg, args):
    from .hym import boundary_from_potentials, save_metric_field, solve_hym

    dg, sg = cfg.domain_grid(), cfg.sphere_grid()
    B = boundary_from_potentials(args.k, cfg.boundary_family().function(dg), dg, sg)
    H = solve_hym(B, dg, tol=cfg.hym_tol, max_iters=cfg.hym_max_iters)
    out = _out_dir(cfg) / f"metric_k{args.k}.bin"
    save_metric_field(out, H, cfg.hym_tol)
    print(f"HYM k={args.k}: residual {H.residual:.3e} after {H.iterations} iterations -> {out}")


def _cmd_envelope(cfg, args):
    from .envelope import save_potential_field
    from .experiments import sweep_envelope

    V = sweep_envelope(cfg, cfg.domain_grid(), cfg.sphere_grid())
    out = _out_dir(cfg) / "envelope.bin"
    save_potential_field(out, V)
    last = V.history[-1] if V.history else 0.0
    print(f"envelope: {len(V.history)} sweeps, last decrement {last:.3e} -> {out}")


def _oracle(cfg, dg, sg):
    from .envelope import toric_geodesic_oracle
    from .errors import ConfigError

    fam = cfg.boundary_family()
    if fam.name != "toric-endpoints":
        raise ConfigError("the oracle needs toric-endpoints boundary data")
    outer, inner = fam.endpoints()
    return toric_geodesic_oracle(outer, inner, dg, sg)


def _cmd_oracle(cfg, args):
    from .envelope import save_potential_field

    V = _oracle(cfg, cfg.domain_grid(), cfg.sphere_grid())
    out = _out_dir(cfg) / "oracle.bin"
    save_potential_field(out, V)
    print(f"oracle on {V.values.shape} nodes -> {out}")


def _cmd_wzw(cfg, args):
    import numpy as np

    from .analysis import characteristic_form, k_density, mixed_hessian, wzw_residual
    from .envelope import load_potential_field, mollify_field
    from .geometry import psi_ddbar

    if args.field:
        V = load_potential_field(args.field)
    else:
        from .geometry import build_chart_grid

        dg = cfg.domain_grid()
        n = cfg.x_resolution
        V = _oracle(cfg, dg, build_chart_grid(n[0], n[1]))
    if args.mollify > 0:
        V = mollify_field(V, args.mollify, args.mollify, total=True)
    H = mixed_hessian(V)
    char = characteristic_form(H)
    K = k_density(H)
    del H
    res = wzw_residual(V)
    ok = np.isfinite(res)
    scale = float(np.max(psi_ddbar(V.sgrid.nodes)))
    summary = {"nodes": int(ok.sum()),
               "sup_characteristic_form": float(np.max(np.abs(char[ok]))),
               "sup_residual": float(np.max(np.abs(res[ok]))),
               "min_k_density": float(np.min(K[ok])),
               "sup_psi_ddbar": scale}
    out = _out_dir(cfg) / "wzw_check.json"
    _write_json(out, summary)
    print(f"sup |char form| = {summary['sup_characteristic_form']:.3e}, "
          f"sup |WZW residual| = {summary['sup_residual']:.3e} -> {out}")


def _cmd_converge(cfg, args):
    from .experiments import run_convergence_study

    if not cfg.output_dir:
        cfg.output_dir = "."
    rep = run_convergence_study(cfg)
    for r in rep.rows:
        flag = f"  {r['error']}" if "error" in r else ""
        print(f"k={r['k']:4d}  sup_error={r['sup_error']:.6e}  "
              f"hym_residual={r['hym_residual']:.3e}{flag}")
    print(f"fit: C = {rep.fit['C']:.4f}, relative residual {rep.fit['relative_residual']:.3f}")
    if any(r.get("non_convergence") for r in rep.rows):
        return EXIT_NONCONVERGENCE
    return EXIT_FAIL if any("error" in r for r in rep.rows) else EXIT_OK


def _cmd_props(cfg, args):
    from .experiments import run_property_suites

    summary = run_property_suites(cfg)
    for r in summary["suites"]:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['suite']:40s} margin {r['margin']:.3e}")
    return EXIT_OK if summary["passed"] else EXIT_FAIL


_COMMANDS = {"hilbert": _cmd_hilbert, "fs": _cmd_fs, "hym-solve": _cmd_hym,
             "envelope": _cmd_envelope, "oracle": _cmd_oracle, "wzw-check": _cmd_wzw,
             "converge": _cmd_converge, "props": _cmd_props}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("wzwlab: error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    from .errors import CapacityError, ConfigError, NonConvergenceError, WZWLabError
    from .experiments import StageError

    try:
        cfg = _config(args)
        code = _COMMANDS[args.command](cfg, args)
    except (ConfigError, CapacityError) as exc:
        print(f"wzwlab: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"wzwlab: no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except StageError as exc:
        if isinstance(exc.cause, NonConvergenceError):
            print(f"wzwlab: no convergence: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGENCE
        if isinstance(exc.cause, (ConfigError, CapacityError)):
            print(f"wzwlab: invalid config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"wzwlab: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except WZWLabError as exc:
        print(f"wzwlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if code is None else code
