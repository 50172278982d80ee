"""Command-line front end.

Subcommands (all driven by one TOML config, see :mod:`ftlmacro.config`):

    validate             check assumptions H1-H5; exit 0 iff all pass
    build-flux           tabulate the effective velocity + fundamental diagram
    simulate             integrate a microscopic scenario, export trajectory CSV
    solve-macro          solve HJ (label space) and/or LWR (road space) fields
    converge             run the micro-to-macro convergence study
    fundamental-diagram  empirical long-run speeds vs the effective velocity

Flags: --config PATH (required), --out DIR, --seed N, --jobs N, --quiet.

Seed precedence for ``simulate``: --seed flag, then the FTLMACRO_SEED
environment variable, then [micro].seed, then 0.

Exit codes: 0 success, 1 domain or assumption failure, 2 usage/parse error.

Every command is a pure function of (config file, seed, library version);
reruns reproduce all outputs bitwise except wall-clock timing fields.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, load_config
from .convergence_harness import convergence_study, fundamental_diagram_study
from .effective_flux import (build_flux, flux_lipschitz, write_flux_csv,
                             write_fundamental_diagram_csv)
from .errors import ConfigFileError, DomainError, FtlMacroError
from .io_utils import write_gnuplot_script, write_json
from .macro_solvers import (Grid1D, pushforward_density, solve_hj,
                            solve_lwr_godunov, write_field_plot_script)
from .micro_sim import GhostHeadway, MicroState, corrector_sequence, integrate
from .velocity_models import ovf_inverse, sample_types, validate_assumptions

SEED_ENV_VAR = "FTLMACRO_SEED"


def _say(args, *message):
    if not args.quiet:
        print(*message)


def _formats(cfg: ScenarioConfig):
    return set(cfg.section("output").get("formats", ["csv", "json", "gnuplot"]))


def cmd_validate(cfg: ScenarioConfig, args) -> int:
    dist = cfg.distribution()
    report = validate_assumptions(dist)
    for line in report.summary_lines():
        _say(args, line)
    return 0 if report.all_pass else 1


def _build_flux_from_config(cfg: ScenarioConfig, dist):
    sec = cfg.section("flux", required=True)
    return build_flux(dist, p_max=float(sec["p_max"]),
                      grid_points=int(sec["grid_points"]),
                      tol=float(sec["tol"]))


def cmd_build_flux(cfg: ScenarioConfig, args) -> int:
    dist = cfg.distribution()
    flux = _build_flux_from_config(cfg, dist)
    out = cfg.output_directory(args.out)
    fmts = _formats(cfg)
    write_flux_csv(flux, out / "flux.csv", extra_header=[f"scenario_hash={cfg.scenario_hash}"])
    write_fundamental_diagram_csv(flux, out / "fundamental_diagram.csv",
                                  extra_header=[f"scenario_hash={cfg.scenario_hash}"])
    if "gnuplot" in fmts:
        write_gnuplot_script(out / "flux.gp", out / "flux.csv",
                             "effective velocity", "headway p (m)", "F (m/s)",
                             ["csv using 1:2 with lines title 'F(p)'"],
                             extra=("set grid",), scenario_hash=cfg.scenario_hash)
        write_gnuplot_script(out / "fundamental_diagram.gp",
                             out / "fundamental_diagram.csv",
                             "fundamental diagram", "density rho (1/m)",
                             "flow q (1/s)",
                             ["csv using 1:3 with lines title 'q(rho)'"],
                             extra=("set grid",), scenario_hash=cfg.scenario_hash)
    _say(args, f"flux table with {flux.p_grid.size} points -> {out}/flux.csv")
    return 0


def _resolve_seed(cfg: ScenarioConfig, args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigFileError(f"{SEED_ENV_VAR} must be an integer, got {env!r}")
    return int(cfg.section("micro").get("seed", 0))


def cmd_simulate(cfg: ScenarioConfig, args) -> int:
    dist = cfg.distribution()
    micro = cfg.section("micro", required=True)
    seed = _resolve_seed(cfg, args)
    n = int(micro.get("n_vehicles", 100))
    if n < 2:
        raise DomainError("[micro].n_vehicles must be >= 2")
    mode = micro.get("mode", "linear")
    types = sample_types(dist, n, seed)
    closure = None
    if mode == "linear":
        positions = float(micro["headway"]) * np.arange(n, dtype=float)
    elif mode == "corrector":
        theta = float(micro["theta"])
        positions = corrector_sequence(types, dist, theta)
        if "leader_closure" not in micro:
            # exact traveling closure: the leader drives at exactly theta
            closure = GhostHeadway(gap=float(ovf_inverse(dist.types[types[-1]], theta)))
    elif mode == "profile":
        epsilon = float(micro["epsilon"])
        u0 = cfg.initial_profile()
        i = np.arange(n, dtype=float)
        positions = np.asarray(u0(epsilon * i), dtype=float) / epsilon
    else:
        raise ConfigFileError("[micro].mode must be linear, corrector, or profile")
    if closure is None:
        closure = cfg.leader_closure()

    dt = float(micro["dt"]) if "dt" in micro else float(micro.get("dt_factor", 0.5)) / dist.alpha
    state = MicroState(positions=positions, type_indices=types, dist=dist,
                       leader_closure=closure)
    traj = integrate(state, horizon=float(micro["horizon"]), dt=dt,
                     sample_every=int(micro.get("sample_every", 1)), seed=seed)
    out = cfg.output_directory(args.out)
    traj.to_csv(out / "trajectory.csv", scenario_hash=cfg.scenario_hash)
    _say(args, f"{n} cars, {traj.times.size} snapshots -> {out}/trajectory.csv")
    return 0


def cmd_solve_macro(cfg: ScenarioConfig, args) -> int:
    dist = cfg.distribution()
    flux = _build_flux_from_config(cfg, dist)
    macro = cfg.section("macro", required=True)
    u0 = cfg.initial_profile()
    which = macro.get("solve", "both")
    if which not in ("hj", "lwr", "both"):
        raise ConfigFileError("[macro].solve must be hj, lwr, or both")
    out = cfg.output_directory(args.out)
    fmts = _formats(cfg)
    store_every = int(macro.get("store_every", 1))
    grid = Grid1D(x_min=float(macro["x_min"]), x_max=float(macro["x_max"]),
                  nx=int(macro["nx"]), t_final=float(macro["t_final"]),
                  dt=float(macro["dt"]) if "dt" in macro else None,
                  boundary=macro.get("boundary", "linear_extension"))

    hj_field = None
    if which in ("hj", "both"):
        hj_field = solve_hj(u0, flux, grid, store_every=store_every)
        hj_field.to_csv(out / "hj_field.csv", scenario_hash=cfg.scenario_hash)
        if "gnuplot" in fmts:
            write_field_plot_script(hj_field, out / "hj_field.csv",
                                    out / "hj_field.gp", cfg.scenario_hash)
        _say(args, f"HJ field ({hj_field.times.size} snapshots) -> {out}/hj_field.csv")

    if which in ("lwr", "both"):
        # Road-space window: for "both" it is derived from the HJ solution's
        # image so the push-forward bridge is well defined at every time;
        # for "lwr" alone the configured window is road space directly.
        T = grid.t_final
        if hj_field is not None:
            y_lo = float(hj_field.final[0]) + 2 * grid.dx
            y_hi = float(hj_field.values[0][-1]) - 2 * grid.dx
            labels = grid.nodes
            u0_nodes = hj_field.values[0]
        else:
            lo_g, hi_g = u0.gradient_bounds
            span = grid.x_max - grid.x_min
            labels = np.linspace(grid.x_min - 0.5 * span, grid.x_max + 0.5 * span,
                                 4 * grid.nx + 1)
            u0_nodes = np.asarray(u0(labels), dtype=float)
            y_lo, y_hi = float(macro["x_min"]), float(macro["x_max"])
        n_cells = max(4, int(round((y_hi - y_lo) / grid.dx)))
        road = Grid1D(x_min=y_lo, x_max=y_lo + n_cells * grid.dx, nx=n_cells,
                      t_final=T, boundary=grid.boundary)
        rho0 = pushforward_density(labels, u0_nodes, road)
        lwr_field = solve_lwr_godunov(rho0, flux, road, store_every=store_every)
        lwr_field.to_csv(out / "lwr_field.csv", scenario_hash=cfg.scenario_hash)
        if "gnuplot" in fmts:
            write_field_plot_script(lwr_field, out / "lwr_field.csv",
                                    out / "lwr_field.gp", cfg.scenario_hash)
        _say(args, f"LWR field ({lwr_field.times.size} snapshots) -> {out}/lwr_field.csv")

        if hj_field is not None and "json" in fmts:
            rho_hj = pushforward_density(labels, hj_field.final, road)
            smax = lwr_field.diagnostics["wave_speed"]
            centers = road.centers
            mask = (centers >= y_lo + smax * T) & (centers <= y_hi - smax * T)
            if np.any(mask):
                l1 = float(np.sum(np.abs(rho_hj - lwr_field.final)[mask]) * road.dx)
            else:
                l1 = float("nan")
            write_json(out / "bridge.json", {
                "l1_distance_interior": l1, "dx": road.dx,
                "interior_cells": int(np.sum(mask)),
                "mass_drift_per_step": lwr_field.diagnostics["max_mass_drift_per_step"],
            }, cfg.scenario_hash)
            _say(args, f"bridge L1 (interior) = {l1:.6g} -> {out}/bridge.json")
    return 0


def cmd_converge(cfg: ScenarioConfig, args) -> int:
    scenario = cfg.scenario()
    report = convergence_study(scenario, n_jobs=args.jobs)
    out = cfg.output_directory(args.out)
    fmts = _formats(cfg)
    report.to_csv(out / "report.csv")
    if "json" in fmts:
        report.to_json(out / "report.json")
    if "gnuplot" in fmts:
        report.write_plot_script(out / "error_plot.gp", out / "report.csv")
    for s in report.per_epsilon:
        _say(args, f"eps={s.epsilon:g}: max sup error {s.max_sup:.6g} "
                   f"(mean {s.mean_sup:.6g})")
    _say(args, f"trend: {report.trend_verdict}; verdict: {report.verdict}")
    if report.verdict == "fail" or report.trend_verdict == "interrupted":
        return 1
    return 0


def cmd_fundamental_diagram(cfg: ScenarioConfig, args) -> int:
    dist = cfg.distribution()
    fd = cfg.section("fd", required=True)
    study = fundamental_diagram_study(
        dist, p_values=[float(p) for p in fd["p_values"]],
        seeds=[int(s) for s in fd["seeds"]], horizon=float(fd["horizon"]),
        n_vehicles=int(fd["n_vehicles"]) if "n_vehicles" in fd else None,
        dt=float(fd["dt"]) if "dt" in fd else None,
        scenario_hash=cfg.scenario_hash)
    out = cfg.output_directory(args.out)
    study.to_csv(out / "fd_study.csv")
    if "gnuplot" in _formats(cfg):
        write_gnuplot_script(out / "fd_study.gp", out / "fd_study.csv",
                             "long-run speed vs headway", "p (m)", "speed (m/s)",
                             ["csv using 1:2 with lines title 'F(p)'",
                              "csv using 1:3:4 with yerrorbars title 'empirical'"],
                             extra=("set grid",), scenario_hash=cfg.scenario_hash)
    for row in study.rows:
        _say(args, f"p={row.p:g}: F={row.F_bar:.4f} empirical={row.empirical_mean:.4f}"
                   f" +/- {row.empirical_sd:.4f}")
    _say(args, f"max |empirical - F| = {study.max_discrepancy():.6g}")
    return 0


_COMMANDS = {
    "validate": cmd_validate,
    "build-flux": cmd_build_flux,
    "simulate": cmd_simulate,
    "solve-macro": cmd_solve_macro,
    "converge": cmd_converge,
    "fundamental-diagram": cmd_fundamental_diagram,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftlmacro",
        description="Heterogeneous follow-the-leader traffic and its "
                    "macroscopic limits")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default=None, help="output directory "
                       "(default: [output].directory)")
        p.add_argument("--seed", type=int, default=None,
                       help=f"seed override (beats {SEED_ENV_VAR} and config)")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for study cells")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except ConfigFileError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FtlMacroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyError as exc:
        print(f"config error: missing key {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
