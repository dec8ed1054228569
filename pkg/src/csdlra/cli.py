"""Command-line entry point: ``csdlra <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, default_config, load_config
from .dlra import TruncationPolicy
from .errors import ConfigError, CsdError, RunAborted
from .oracle import LungOptions, OracleSolver, linesource_setup, lung_setup
from .physics import BeamModel, CrossSectionModel, linear_stopping_power, read_table, tabulated
from .solver import Solver, SolverConfig, initial_state

logger = logging.getLogger("csdlra")

OUTPUT_ENV = "CSDLRA_OUTPUT_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, "command line")


def _common(p: argparse.ArgumentParser, run: bool = True) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if run:
        p.add_argument("--vtk", action="store_true", help="also write fields.vtk")
        p.add_argument("--seed", type=int)
        p.add_argument("--export-operators", action="store_true",
                       help="write stencils, flux matrices and quadrature to operators/")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--N", type=int, help="P_N degree")
    p.add_argument("--quad-order", type=int, help="Gauss-Legendre order of the S_N quadrature")
    p.add_argument("--levels", type=int, help="number of collision levels L")
    p.add_argument("--mode", choices=("adaptive", "fixed_rank"))
    theta = p.add_mutually_exclusive_group()
    theta.add_argument("--theta-rel", type=float, help="relative truncation tolerance")
    theta.add_argument("--theta-abs", type=float, help="absolute truncation tolerance")
    p.add_argument("--rank", type=int, help="rank in fixed_rank mode")
    p.add_argument("--r-min", type=int)
    p.add_argument("--r-max", type=int)
    p.add_argument("--cfl", type=float, help="CFL safety factor in (0, 1]")
    p.add_argument("--t-end", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--strict-norm-check", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csdlra", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("linesource", help="line-source benchmark (DLRA, optionally the oracle)")
    _common(p)
    _solver_flags(p)
    p.add_argument("--grid", type=int, help="cells per side")
    p.add_argument("--oracle", action="store_true", help="also run the dense reference solver")
    p.add_argument("--full-scale", action="store_true",
                   help="200x200 grid, P_21, 968 ordinates (hours)")

    p = sub.add_parser("ct-plan", help="beam dose on a density map from a gray image")
    _common(p)
    _solver_flags(p)
    p.add_argument("--image", help="PGM (P2) or CSV gray image; default layered phantom")
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--width", type=float, help="domain width in cm")
    p.add_argument("--height", type=float, help="domain height in cm")
    p.add_argument("--e-max", type=float)
    p.add_argument("--stopping-power", help="two-column CSV table (E, S)")

    p = sub.add_parser("stability-check", help="amplification moduli and norm histories")
    _common(p)
    p.add_argument("--nu", type=float, nargs="+", help="CFL numbers to test")
    p.add_argument("--grid", type=int, help="cells per side of the periodic grid")
    p.add_argument("--N", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seeds", type=int)

    p = sub.add_parser("compare", help="error table between two field CSVs")
    p.add_argument("a")
    p.add_argument("b", help="reference field")
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("export-modes", help="dominant modes of a saved low-rank factor")
    _common(p, run=False)
    p.add_argument("--factors", required=True, help="folder with X.csv, S.csv, W.csv, meta.json")
    p.add_argument("--k", type=int, default=4, help="number of modes")
    return parser


# -- configuration ---------------------------------------------------------------------------

_FLAG_KEYS = {
    "grid": ("grid", "n"),
    "N": ("basis", "N"),
    "quad_order": ("basis", "quad_order"),
    "levels": ("solver", "levels"),
    "mode": ("solver", "mode"),
    "rank": ("solver", "rank"),
    "r_min": ("solver", "r_min"),
    "r_max": ("solver", "r_max"),
    "cfl": ("solver", "cfl_safety"),
    "t_end": ("solver", "t_end"),
    "max_steps": ("solver", "max_steps"),
    "seed": ("run", "seed"),
    "image": ("physics", "image"),
    "nx": ("grid", "nx"),
    "ny": ("grid", "ny"),
    "width": ("grid", "width"),
    "height": ("grid", "height"),
    "e_max": ("physics", "e_max"),
    "stopping_power": ("physics", "stopping_power_table"),
}

_STABILITY_KEYS = {"nu": "nu", "grid": "n", "N": "N", "rank": "rank", "steps": "steps",
                   "seeds": "seeds"}


def resolve_config(args) -> RunConfig:
    """Config file (or defaults) overlaid with the command-line flags."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        if cfg.command != args.command:
            raise ConfigError(f"file is for {cfg.command!r}, not {args.command!r}",
                              f"{args.config} [run] command")
    else:
        cfg = default_config(args.command)
    if args.command == "stability-check":
        for flag, key in _STABILITY_KEYS.items():
            if getattr(args, flag, None) is not None:
                cfg.set("stability", key, getattr(args, flag))
        if args.seed is not None:
            cfg.set("run", "seed", args.seed)
        return cfg
    for flag, (sec, key) in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg.set(sec, key, value)
    if getattr(args, "theta_rel", None) is not None:
        cfg.set("solver", "theta", args.theta_rel)
        cfg.set("solver", "theta_mode", "relative")
    if getattr(args, "theta_abs", None) is not None:
        cfg.set("solver", "theta", args.theta_abs)
        cfg.set("solver", "theta_mode", "absolute")
    if getattr(args, "strict_norm_check", False):
        cfg.set("solver", "strict_norm_check", True)
    for flag, key in (("oracle", "oracle"), ("full_scale", "full_scale"), ("vtk", "vtk")):
        if getattr(args, flag, False):
            cfg.set("output", key, True)
    if getattr(args, "no_figures", False):
        cfg.set("output", "figures", False)
    image = cfg.get("physics", "image")
    if image and not Path(image).exists():
        raise ConfigError(f"image file {image} does not exist", "[physics] image")
    table = cfg.get("physics", "stopping_power_table")
    if table and not Path(table).exists():
        raise ConfigError(f"table {table} does not exist", "[physics] stopping_power_table")
    s = cfg.section("solver")
    if s["r_min"] > s["r_max"]:
        raise ConfigError(f"r_min={s['r_min']} exceeds r_max={s['r_max']}", "[solver]")
    return cfg


def output_dir(args, cfg: RunConfig | None) -> Path:
    """``--out``, then ``$CSDLRA_OUTPUT_DIR``, then the config, then ``csdlra-out/<command>``."""
    if getattr(args, "out", None):
        return Path(args.out)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    if cfg is not None and cfg.get("run", "output_dir"):
        return Path(cfg.get("run", "output_dir"))
    return Path("csdlra-out") / args.command


def solver_config(cfg: RunConfig, snapshot_dir) -> SolverConfig:
    s = cfg.section("solver")
    adaptive = s["mode"] == "adaptive"
    return SolverConfig(
        levels=s["levels"],
        mode=s["mode"],
        policy=TruncationPolicy(s["theta"], s["theta_mode"], r_min=s["r_min"],
                                r_max=s["r_max"]),
        r_init=s["r_min"] if adaptive else s["rank"],
        cfl_safety=s["cfl_safety"],
        t_end=s["t_end"],
        record_every=s["record_every"],
        strict_norm_check=s["strict_norm_check"],
        max_steps=s["max_steps"],
        snapshot_dir=str(snapshot_dir),
    )


def _summary(report) -> str:
    ranks = report.final_state.ranks()
    rank_txt = ", ".join(f"{k}={v}" for k, v in ranks.items()) or "dense"
    return (f"{report.tag}: {len(report.records)} steps to t={report.final_state.t:.6g} "
            f"in {report.wall_time:.2f} s; final ranks {rank_txt}; "
            f"max rank {report.max_rank()}; max relative norm increase "
            f"{report.max_norm_increase():.3e}")


def field_errors(a, b) -> tuple[float, float, float]:
    """``(||a - b||_2, ||a - b||_2 / ||b||_2, max |a - b|)`` over all cells."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"field shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    l2 = float(np.linalg.norm(diff))
    ref = float(np.linalg.norm(b))
    rel = l2 / ref if ref > 0 else (0.0 if l2 == 0 else float("inf"))
    return l2, rel, float(np.abs(diff).max()) if diff.size else 0.0


# -- commands --------------------------------------------------------------------------------

def cmd_linesource(args, cfg: RunConfig) -> int:
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    ph = cfg.section("physics")
    setup = linesource_setup(cfg.get("grid", "n"), cfg.get("basis", "N"),
                             cfg.get("basis", "quad_order"), ph["sigma"], ph["sigma_s"],
                             full_scale=cfg.get("output", "full_scale"))
    problem = setup.problem
    scfg = solver_config(cfg, out)
    figures, vtk = cfg.get("output", "figures"), cfg.get("output", "vtk")
    extra = _write_inputs(args, cfg, out, problem)

    report = Solver(problem, scfg).run(initial_state(problem, scfg, setup.psi0))
    print(_summary(report))

    if cfg.get("output", "oracle"):
        oracle = OracleSolver(problem, scfg)
        ref = oracle.run(oracle.initial_state(setup.psi0))
        print(_summary(ref))
        extra += io.write_report(ref, out / "oracle", figures=figures, vtk=vtk, factors=False)
        rows = []
        for name, a, b in (("scalar_flux", report.scalar_flux, ref.scalar_flux),
                           ("dose", report.dose, ref.dose)):
            l2, rel, mx = field_errors(a, b)
            rows.append((name, l2, rel, mx))
            print(f"{name}: l2_error={l2:.6e} relative_error={rel:.6e} max_abs_error={mx:.6e}")
        extra.append(io.write_rows_csv(out / "comparison.csv",
                                       ["field", "l2_error", "relative_error", "max_abs_error"],
                                       rows, ["dlra vs oracle at the final time"]))
    io.write_report(report, out, figures=figures, vtk=vtk, extra_paths=extra)
    print(f"output written to {out}")
    return 0


def _write_inputs(args, cfg, out, problem) -> list[Path]:
    paths = [out / "config.ini"]
    paths[0].write_text(cfg.to_ini())
    if getattr(args, "export_operators", False):
        paths += io.write_operators(out / "operators", problem)
    return paths


def _cross_sections(cfg: RunConfig) -> CrossSectionModel:
    ph = cfg.section("physics")
    if ph["stopping_power_table"]:
        S = tabulated(*read_table(ph["stopping_power_table"]))
    else:
        S = linear_stopping_power(ph["s0"], ph["s1"])
    return CrossSectionModel.lung_default(ph["e_max"], S)


def cmd_ct_plan(args, cfg: RunConfig) -> int:
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    g, b, ph = cfg.section("grid"), cfg.section("basis"), cfg.section("physics")
    opts = LungOptions(nx=g["nx"], ny=g["ny"], width=g["width"], height=g["height"],
                       N=b["N"], quad_order=b["quad_order"] or 16, cone_cos=b["cone_cos"],
                       fill_air=ph["fill_air"], e_max=ph["e_max"])
    beam = BeamModel(e_max=ph["e_max"], **cfg.section("beam"))
    setup = lung_setup(ph["image"], opts, beam, _cross_sections(cfg))
    problem = setup.problem
    print(f"ct-plan: {opts.nx}x{opts.ny} cells, P_{opts.N}, {setup.info['n_q']} of "
          f"{setup.info['full_n_q']} ordinates in the beam cone, t_end={problem.t_end:.6g}")
    scfg = solver_config(cfg, out)
    extra = _write_inputs(args, cfg, out, problem)
    report = Solver(problem, scfg).run()
    print(_summary(report))
    if cfg.get("output", "figures"):
        from .plotting import plot_field

        extra.append(plot_field(problem.grid, problem.grid.rho, out / "density.png", "density",
                                "g/cm^3"))
    io.write_report(report, out, figures=cfg.get("output", "figures"),
                    vtk=cfg.get("output", "vtk"),
                    extra_fields={"density": problem.grid.rho}, extra_paths=extra)
    k = int(np.argmax(report.dose))
    x, y = problem.grid.cell_centers()
    print(f"dose maximum {report.dose[k]:.6e} at x={x[k]:.4g} cm, y={y[k]:.4g} cm")
    print(f"output written to {out}")
    return 0


def cmd_stability(args, cfg: RunConfig) -> int:
    from . import stability

    st = cfg.section("stability")
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    grid = stability.periodic_grid(st["n"])
    fourier = stability.fourier_residuals(grid)
    worst = max(fourier.values())
    print(f"fourier diagonalisation on {st['n']}x{st['n']}: max relative residual {worst:.3e}")
    theta_grid = 2.0 * np.pi * np.arange(st["n"]) / st["n"]
    flow = stability.streaming_flow(grid, stability.build_pn_basis(st["N"]))
    seed0 = cfg.get("run", "seed")
    rows, norm_rows, moduli = [], [], []
    for nu in st["nu"]:
        mod = stability.amplification_modulus(nu, extra_theta=theta_grid)
        moduli.append(mod)
        hists = [stability.streaming_norm_history(nu, st["n"], st["N"], st["rank"], st["steps"],
                                                  seed, grid, flow)
                 for seed in range(seed0, seed0 + st["seeds"])]
        ratio = max(h.max_ratio for h in hists)
        mono = all(h.monotone() for h in hists)
        verdict = "stable" if mod <= 1.0 + 1e-12 else "UNSTABLE"
        print(f"nu={nu:g}: max amplification modulus {mod:.15f} ({verdict}); "
              f"max norm ratio {ratio:.12f} over {len(hists)} seeds, "
              f"{'non-increasing' if mono else 'norm grew'}")
        rows.append((nu, mod, verdict.lower(), ratio, str(mono).lower()))
        for h in hists:
            norm_rows += [(nu, h.seed, k, float(v)) for k, v in enumerate(h.norms)]
    comments = [f"grid: {st['n']}x{st['n']} periodic, P_{st['N']}, rank {st['rank']}",
                "fourier residuals: " + " ".join(f"{k}={v:.3e}" for k, v in fourier.items())]
    paths = [
        io.write_rows_csv(out / "stability.csv",
                          ["nu", "max_amplification_modulus", "verdict", "max_norm_ratio",
                           "norm_non_increasing"], rows, comments),
        io.write_rows_csv(out / "stability_norms.csv", ["nu", "seed", "step", "frobenius_norm"],
                          norm_rows, comments),
    ]
    if cfg.get("output", "figures") and not args.no_figures:
        from .plotting import plot_amplification, plot_norm_sweep

        paths.append(plot_amplification(st["nu"], moduli, out / "amplification.png"))
        paths.append(plot_norm_sweep(norm_rows, out / "stability_norms.png"))
    io.write_manifest(out, paths, {"command": "stability-check"})
    print(f"output written to {out}")
    return 0


def cmd_compare(args) -> int:
    try:
        a, meta_a = io.read_field_csv(args.a)
        b, meta_b = io.read_field_csv(args.b)
    except OSError as exc:
        raise ConfigError(f"cannot read field: {exc.strerror}", exc.filename) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    l2, rel, mx = field_errors(a, b)
    print("field_a,field_b,l2_error,relative_error,max_abs_error")
    print(f"{args.a},{args.b},{l2!r},{rel!r},{mx!r}")
    return 0


def cmd_export_modes(args, cfg: RunConfig | None) -> int:
    from .grid import build_grid
    from .plotting import plot_directional_modes, plot_spatial_modes

    folder = Path(args.factors)
    if not (folder / "meta.json").exists():
        raise ConfigError("no meta.json in factor folder", str(folder))
    if args.k < 1:
        raise ConfigError("--k must be positive", "--k")
    f, meta = io.read_factors(folder)
    U, sigma, Vt = np.linalg.svd(f.S)
    k = min(args.k, f.rank)
    spatial = f.X @ U[:, :k]
    directional = f.W @ Vt[:k].T
    out = output_dir(args, None)
    out.mkdir(parents=True, exist_ok=True)
    grid = build_grid(meta["N_x"], meta["N_y"], meta["dx"], meta["dy"], tuple(meta["origin"]))
    N = int(round(np.sqrt(f.shape[1]))) - 1
    modes = [f"mode{i + 1}" for i in range(k)]
    paths = [
        io.write_rows_csv(out / "singular_values.csv", ["index", "sigma"],
                          [(i + 1, float(s)) for i, s in enumerate(sigma)],
                          [f"component: {meta.get('component', '?')}"]),
        io.write_rows_csv(out / "spatial_modes.csv", ["cell"] + modes,
                          [(c, *map(float, row)) for c, row in enumerate(spatial)],
                          [h[2:] for h in io.grid_header(grid, "spatial_modes")[1:]]),
        io.write_rows_csv(out / "directional_modes.csv", ["moment"] + modes,
                          [(c, *map(float, row)) for c, row in enumerate(directional)],
                          [f"P_{N}, flat index l^2 + l + k"]),
    ]
    if not args.no_figures:
        paths.append(plot_spatial_modes(grid, spatial, out / "spatial_modes.png"))
        paths.append(plot_directional_modes(N, directional, out / "directional_modes.png"))
    io.write_manifest(out, paths, {"command": "export-modes", "factors": str(folder)})
    print(f"{k} modes of a rank-{f.rank} factor; leading singular values "
          + " ".join(f"{s:.4e}" for s in sigma[:k]))
    print(f"output written to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        level = logging.WARNING - 10 * min(args.verbose, 2)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "export-modes":
            return cmd_export_modes(args, None)
        cfg = resolve_config(args)
        handler = {"linesource": cmd_linesource, "ct-plan": cmd_ct_plan,
                   "stability-check": cmd_stability}[args.command]
        return handler(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        if exc.snapshot:
            print(f"snapshot: {exc.snapshot}", file=sys.stderr)
        return 2
    except (CsdError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

