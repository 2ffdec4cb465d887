"""Command line entry point: ``wpflow {validate,run,study,pde} --config FILE``.

Exit codes: 0 success, 1 failed assertion, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._io import fmt, write_csv, write_json
from .config import RunConfig, load_config
from .energy import validate_hypotheses
from .errors import ConfigError, WpflowError
from .experiments import STUDIES, StudySpec, make_density, run_study
from .fv import fv_solve
from .integrator import IntegratorSpec, run, trajectory_diagnostics
from .particles import DomainSpec, ParticleConfig, minimal_selection, subgradient_index_check
from .transport import DensityProfile, recovery_sequence

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

VALIDATION_GRID = np.logspace(-6, 6, 2001)


def _run_dir(cfg: RunConfig, command: str) -> Path:
    """Fresh timestamped directory; earlier runs are never overwritten."""
    base = Path(cfg.output.dir)
    stamp = dt.datetime.now().strftime("%Y%m%dT%H%M%S-%f")
    path = base / f"{command}-{stamp}"
    k = 1
    while path.exists():
        path = base / f"{command}-{stamp}-{k}"
        k += 1
    path.mkdir(parents=True)
    write_json(path / "config.json", cfg.model_dump())
    return path


def _density(cfg: RunConfig) -> Optional[DensityProfile]:
    init = cfg.initial
    if init is None or init.density is None:
        return None
    return make_density(init.density, **_density_args(cfg))


def _density_args(cfg: RunConfig) -> dict:
    init, l = cfg.initial, cfg.domain.l
    if init is None or init.density is None:
        return {}
    if init.density == "uniform":
        return {"a": -l, "b": l}
    if init.density == "cosine_bump":
        return {"l": l, "amplitude": init.amplitude}
    return {"xs": list(init.xs), "values": list(init.values)}


def _initial_config(cfg: RunConfig) -> ParticleConfig:
    init = cfg.initial
    if init is None:
        raise ConfigError("initial: missing required section")
    rho = _density(cfg)
    if rho is not None:
        if init.N is None:
            raise ConfigError("initial.N: missing required key (particle runs from a density need N)")
        x0 = recovery_sequence(rho, init.N).config
        if cfg.integrator.pinned:
            return x0
        return ParticleConfig(x0.positions, DomainSpec.interval(x0.domain.l, pinned=False), sort=False)
    if cfg.domain.kind == "whole_line":
        domain = DomainSpec.whole_line()
    else:
        domain = DomainSpec.interval(cfg.domain.l, pinned=cfg.integrator.pinned)
    try:
        return ParticleConfig(init.particles, domain)
    except WpflowError as err:
        raise ConfigError(f"initial.particles: {err}") from None


def cmd_validate(cfg: RunConfig, out: Path) -> int:
    model = cfg.model
    report = validate_hypotheses(model, VALIDATION_GRID)
    index = subgradient_index_check(model)
    text = report.format() + (
        f"\nsubgradient index placement: {index['convention']} "
        f"(statement err {index['statement_error']:.2e}, swapped err {index['proof_error']:.2e}, "
        f"assembled err {index['assembled_error']:.2e})"
    )
    (out / "report.txt").write_text(text + "\n")
    write_json(out / "report.json", {**report.as_dict(), "subgradient_index": index})
    print(text)
    return EXIT_OK if report.passed and index["assembled_matches"] else EXIT_ASSERT


def cmd_run(cfg: RunConfig, out: Path) -> int:
    model = cfg.model
    x0 = _initial_config(cfg)
    rho = _density(cfg)
    if rho is not None:
        write_csv(out / "density.csv", ("x", "rho(x)"), rho.rows())
        write_csv(out / "quantile.csv", ("s", "Q(s)"), rho.quantile_rows())
    ib = cfg.integrator
    spec = IntegratorSpec(
        scheme=ib.scheme, dt=ib.dt, t_end=ib.t_end, adapt=ib.adapt,
        safety=ib.safety, record_every=ib.record_every,
    )
    traj = run(x0, model, spec)
    write_csv(out / "trajectory.csv", ("t", "E_N", "g_N_dual_q", "g_N_paper_p", "speed_wp", "moment_p"), traj.rows())
    diag = trajectory_diagnostics(traj, model)
    cols = (
        "t", "wp_to_initial", "tightness_bound", "tightness_margin", "moment", "moment_bound",
        "moment_margin", "slope_gap_margin", "mesh_lower_margin", "mesh_upper_margin", "mesh_ratio",
    )
    write_csv(out / "diagnostics.csv", cols, zip(*(diag[c] for c in cols)))
    snaps = out / "particles"
    for k, (t, state) in enumerate(zip(traj.times, traj.states)):
        if k % ib.snapshot_every and k != len(traj) - 1:
            continue
        write_csv(snaps / f"snapshot_{k:05d}.csv", ("t", "i", "x_i"),
                  ((t, i + 1, x) for i, x in enumerate(state.positions)))
    sel = minimal_selection(traj.final, model)
    write_csv(out / "subgradient.csv", ("i", "psi_i", "z_i", "lambda_class"), sel.rows())

    E = np.asarray(traj.energies)
    slack = 1e-12 * (1.0 + abs(E[0]))
    checks = {
        "energy_non_increasing": bool(np.all(np.diff(E) <= slack)),
        "tightness_bound": bool(np.all(diag["tightness_margin"] >= 0)),
        "moment_bound": bool(np.all(diag["moment_margin"] >= 0)),
    }
    # mesh bounds are reported, not enforced
    report = {
        "N": x0.N,
        "n_steps": traj.n_steps,
        "n_rejections": traj.n_rejections,
        "E_initial": float(E[0]),
        "E_final": float(E[-1]),
        "edi_residual_final": float(traj.edi_residual()[-1]),
        "min_mesh_lower_margin": float(np.min(diag["mesh_lower_margin"])),
        "min_mesh_upper_margin": float(np.min(diag["mesh_upper_margin"])),
        "checks": checks,
        "passed": all(checks.values()),
    }
    write_json(out / "summary.json", report)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"E_N(0)={fmt(E[0])} E_N(T)={fmt(E[-1])} steps={traj.n_steps}")
    return EXIT_OK if report["passed"] else EXIT_ASSERT


def cmd_study(cfg: RunConfig, out: Path) -> int:
    density = cfg.initial.density if cfg.initial and cfg.initial.density else "cosine_bump"
    args = _density_args(cfg) if cfg.initial and cfg.initial.density else {"l": cfg.domain.l}
    try:
        spec = _study_spec(cfg, density, args, out)
    except ValueError as err:
        raise ConfigError(f"study: {err}") from None
    res = run_study(spec)
    for a in res.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'} {a.name}: {a.detail}")
    return EXIT_OK if res.passed else EXIT_ASSERT


def _study_spec(cfg: RunConfig, density: str, args: dict, out: Path) -> StudySpec:
    sb = cfg.study
    return StudySpec(
        study=sb.name, N_list=tuple(sb.N_list), params=cfg.energy.params, density=density,
        density_args=args, t_end=sb.t_end, t_samples=tuple(sb.t_samples), dt=sb.dt,
        dt_fraction=sb.dt_fraction, pde_M=cfg.pde.M, pde_safety=cfg.pde.safety, seed=sb.seed,
        liminf_trials=sb.liminf_trials, tol=sb.tol, workers=cfg.workers, output=out,
    )


def cmd_pde(cfg: RunConfig, out: Path) -> int:
    rho = _density(cfg)
    if rho is None:
        raise ConfigError("initial.density: the pde command needs an initial density")
    pb = cfg.pde
    samples = [t for t in pb.t_samples if t <= pb.t_end]
    sol = fv_solve(rho, cfg.energy.params, cfg.domain.l, pb.M, pb.t_end, t_samples=samples, safety=pb.safety)
    write_csv(out / "pde.csv", ("t", "x_center", "u"), sol.rows())
    write_csv(out / "pde_energy.csv", ("t", "E", "mass"),
              ((t, e, g.mass) for t, e, g in zip(sol.times, sol.energies, sol.grids)))
    E = np.asarray(sol.energies)
    ok = bool(np.all(np.diff(E) <= 1e-12 * (1.0 + abs(E[0]))))
    write_json(out / "summary.json", {"n_steps": sol.n_steps, "energy_non_increasing": ok, "passed": ok})
    print(f"{'PASS' if ok else 'FAIL'} energy_non_increasing")
    print(f"steps={sol.n_steps} E(0)={fmt(E[0])} E(T)={fmt(E[-1])}")
    return EXIT_OK if ok else EXIT_ASSERT


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "study": cmd_study, "pde": cmd_pde}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wpflow", description="Particle gradient flows in Wasserstein-p space.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="TOML configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key, e.g. energy.p=3")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "study" and cfg.study.name not in STUDIES:
            raise ConfigError(f"study.name: unknown study {cfg.study.name!r}; valid studies: {', '.join(STUDIES)}")
        out = _run_dir(cfg, args.command)
        code = COMMANDS[args.command](cfg, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except WpflowError as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"output: {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
