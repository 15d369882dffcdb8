"""Command-line interface ``slwr``.

Every artifact-writing command records a run manifest next to its output.
Exit codes: 0 success, 1 failed validation, 2 configuration or domain error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from stochastic_lwr import _io
from stochastic_lwr._config import load_model
from stochastic_lwr._errors import ConfigurationError, DomainError, NumericalError, ValidationFailure
from stochastic_lwr._fpe import (
    DensityGrid,
    DensityMesh,
    MeanFieldClosure,
    OracleTabulatedClosure,
    ZeroClosure,
    mollified_delta,
    solve_fpe,
)
from stochastic_lwr._inference import congestion_risk, flow_pushforward, recover_density, summary_stats
from stochastic_lwr._manifest import RunManifest
from stochastic_lwr._model import validate_assumptions
from stochastic_lwr._pfode import (
    TabulatedScore,
    assemble_velocity,
    check_boundary_compatibility,
    sample_particles,
    transport_particles,
)
from stochastic_lwr._score import LearnedScore
from stochastic_lwr._simulation import (
    BoundaryKind,
    estimate_conditional_drift,
    load_ensemble,
    make_grid,
    simulate_ensemble,
)
from stochastic_lwr._training import ObservationSet, load_checkpoint, load_train_config, train
from stochastic_lwr._triangle import stable_steps, triangle

if TYPE_CHECKING:
    from collections.abc import Sequence

    import stochastic_lwr

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIGURATION = 2
EXIT_NUMERICAL = 3


def _model(args: argparse.Namespace) -> stochastic_lwr.TrafficModel:
    return load_model(args.config)


def _finish(manifest: RunManifest, *outputs: Path) -> None:
    for path in outputs:
        manifest.add_artifact(path)
    manifest.stop()
    path = manifest.write(outputs[0])
    logger.info("%s wrote %s and %s", manifest.command, ", ".join(str(p) for p in outputs), path)


def cmd_simulate(args: argparse.Namespace) -> int:
    """Monte Carlo ensemble to an SLWR1 file."""
    model = _model(args)
    nt = args.nt if args.nt is not None else stable_steps(model, args.nx, args.store_every)
    grid = make_grid(model, args.nx, nt, args.boundary, args.rho_left, args.rho_right, args.store_every)
    manifest = RunManifest(
        "simulate",
        {"config": str(args.config)},
        {"seed": args.seed},
        {"nx": args.nx, "nt": nt, "nreal": args.nreal, "store_every": args.store_every, "boundary": args.boundary},
    )
    ens = simulate_ensemble(model, grid, args.nreal, args.seed, workers=args.threads)
    out = Path(args.out)
    ens.save(out)
    outputs = [out]
    if args.hdf5:
        archive = out.with_suffix(".h5")
        ens.to_hdf5(archive)
        outputs.append(archive)
    _finish(manifest, *outputs)
    return EXIT_OK


def _closure(name: str, model: stochastic_lwr.TrafficModel, args: argparse.Namespace) -> stochastic_lwr.Closure:
    """Closure from ``zero``, ``meanfield`` or ``oracle:<ensemble file>``."""
    if name == "zero":
        return ZeroClosure()
    if name == "meanfield":
        nt = stable_steps(model, args.nx)
        grid = make_grid(model, args.nx, nt, args.boundary, args.rho_left, args.rho_right)
        return MeanFieldClosure.from_deterministic(model, grid)
    if name.startswith("oracle:"):
        ens = load_ensemble(name.removeprefix("oracle:"), model, args.boundary, args.rho_left, args.rho_right)
        ix = int(np.argmin(np.abs(ens.grid.x - args.x)))
        oracles = [estimate_conditional_drift(ens, ix, j, args.bins) for j in range(len(ens.stored_times))]
        return OracleTabulatedClosure(oracles)
    raise ConfigurationError(f"Unknown closure {name!r}; use zero, meanfield or oracle:<ensemble file>.")


def cmd_solve_fpe(args: argparse.Namespace) -> int:
    """Fokker–Planck density grid to CSV."""
    model = _model(args)
    closure = _closure(args.closure, model, args)
    mesh = DensityMesh(args.ncells, model.rho_max)
    init = mollified_delta(mesh, float(model.rho0(args.x)), args.init_width)
    tmax = args.tmax if args.tmax is not None else model.horizon
    manifest = RunManifest(
        "solve-fpe",
        {"config": str(args.config)},
        {},
        {"closure": args.closure, "x": args.x, "ncells": args.ncells, "dt": args.dt, "tmax": tmax},
    )
    pgrid = solve_fpe(model, closure, args.x, mesh, (0.0, tmax), args.dt, init, args.store_every)
    out = Path(args.out)
    pgrid.to_csv(out)
    outputs = [out]
    if args.hdf5:
        archive = out.with_suffix(".h5")
        pgrid.to_hdf5(archive)
        outputs.append(archive)
    _finish(manifest, *outputs)
    return EXIT_OK


def cmd_pfode(args: argparse.Namespace) -> int:
    """Particles transported along the probability flow of a density grid."""
    model = _model(args)
    pgrid = DensityGrid.from_csv(args.pgrid)
    args.x = pgrid.x
    closure = _closure(args.closure, model, args)
    field = assemble_velocity(closure, model, TabulatedScore(pgrid), pgrid.x)
    start = pgrid.start_index() if args.t0 is None else pgrid.time_index(args.t0)
    particles = sample_particles(pgrid, start, args.nparticles, args.seed)
    dt_ode = args.dt if args.dt is not None else pgrid.time_step
    if not dt_ode > 0:
        raise ConfigurationError(f"Density grid {args.pgrid} carries no solver step; pass --dt.")
    manifest = RunManifest(
        "pfode",
        {"config": str(args.config), "pgrid": str(args.pgrid)},
        {"seed": args.seed},
        {
            "t0": particles.t_current,
            "t1": args.t1,
            "dt": dt_ode,
            "nparticles": args.nparticles,
            "closure": args.closure,
        },
    )
    moved = transport_particles(field, particles, args.t1, dt_ode)
    out = Path(args.out)
    _io.write_csv(out, pd.DataFrame({"rho_hat": moved.positions}), description=f"t: {moved.t_current!r}")
    _finish(manifest, out)
    times = np.linspace(min(particles.t_current, args.t1), max(particles.t_current, args.t1), 5)
    report = check_boundary_compatibility(field, times, args.margin * model.rho_max)
    sys.stdout.write(_io.dump_yaml(report.to_dict(), kind="boundary report"))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Joint score and closure training to a checkpoint."""
    model = _model(args)
    overrides = {"seed": args.seed}
    if args.learn_noise:
        overrides["learn_noise"] = True
    config = load_train_config(args.train_config, **overrides)
    obs = ObservationSet.from_csv(args.obs, model)
    configs = {"config": str(args.config), "obs": str(args.obs)}
    if args.train_config is not None:
        configs["train_config"] = str(args.train_config)
    manifest = RunManifest("train", configs, {"seed": args.seed}, config.to_dict())
    trained = train(obs, model, config)
    out = Path(args.out)
    trained.save(out)
    outputs = [out]
    if args.log is not None:
        _io.write_csv(args.log, trained.log, description="training log")
        outputs.append(Path(args.log))
    _finish(manifest, *outputs)
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    """Summary statistics of the learned marginal at one point."""
    model = _model(args)
    trained = load_checkpoint(args.ckpt, model)
    d = recover_density(LearnedScore(trained.score, args.x), args.x, args.t, n_q=args.nq)
    rho_c = args.rho_c if args.rho_c is not None else model.flux.capacity[0]
    summary = summary_stats(d).to_dict() | {"congestion_risk": congestion_risk(d, rho_c), "rho_c": rho_c}
    summary |= {"x": args.x, "t": args.t}
    manifest = RunManifest(
        "infer", {"config": str(args.config), "ckpt": str(args.ckpt)}, {}, {"x": args.x, "t": args.t, "nq": args.nq}
    )
    out = Path(args.out)
    out.write_text(json.dumps(summary, indent=2) + "\n")
    outputs = [out]
    if args.flow_out is not None:
        flow = flow_pushforward(d, model.flux)
        _io.write_csv(args.flow_out, pd.DataFrame({"q": flow.q_nodes, "p_q": flow.p_q}), description="flow density")
        outputs.append(Path(args.flow_out))
    _finish(manifest, *outputs)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    """Standing-assumption checks of a model file."""
    report = validate_assumptions(_model(args))
    sys.stdout.write(_io.dump_yaml(report.to_dict(), kind="validation report"))
    if not report.ok:
        raise ValidationFailure("Model violates fatal standing assumptions.")
    return EXIT_OK


def cmd_triangle(args: argparse.Namespace) -> int:
    """Monte Carlo / Fokker–Planck / probability-flow consistency check."""
    model = _model(args)
    manifest = RunManifest(
        "triangle", {"config": str(args.config)}, {"seed": args.seed}, {"nreal": args.nreal, "nx": args.nx}
    )
    report = triangle(model, args.nreal, args.seed, nx=args.nx, workers=args.threads)
    text = _io.dump_yaml(report.to_dict(), kind="triangle report")
    sys.stdout.write(text)
    if args.out is not None:
        out = Path(args.out)
        out.write_text(text)
        _finish(manifest, out)
    if not report.passed:
        raise ValidationFailure(
            f"Triangle check failed: W1={report.w1_mc_fpe:.4g}, KS={report.ks_pf_fpe:.4g} above their thresholds."
        )
    return EXIT_OK


def _add_grid_options(parser: argparse.ArgumentParser, nx: int) -> None:
    parser.add_argument("--nx", type=int, default=nx, help="spatial cells")
    parser.add_argument("--boundary", choices=[b.value for b in BoundaryKind], default=BoundaryKind.PERIODIC.value)
    parser.add_argument("--rho-left", type=float, default=None, help="left Dirichlet state")
    parser.add_argument("--rho-right", type=float, default=None, help="right Dirichlet state")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline stage."""
    parser = argparse.ArgumentParser(prog="slwr", description="Distributional pipeline for stochastic LWR traffic.")
    parser.add_argument("--verbose", "-v", action="count", default=0, help="more log output (repeatable)")
    parser.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo ensemble")
    p.add_argument("--config", required=True, type=Path)
    _add_grid_options(p, 64)
    p.add_argument("--nt", type=int, default=None, help="time steps (default: CFL 0.8)")
    p.add_argument("--nreal", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--store-every", type=int, default=1)
    p.add_argument("--hdf5", action="store_true", help="also archive the ensemble as HDF5")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve-fpe", help="Fokker-Planck solution at one position")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--closure", default="zero", help="zero, meanfield or oracle:<ensemble file>")
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--ncells", type=int, default=400)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--tmax", type=float, default=None)
    p.add_argument("--init-width", type=float, default=None, help="mollifier standard deviation")
    p.add_argument("--store-every", type=int, default=1)
    p.add_argument("--bins", type=int, default=100, help="bins of the oracle closure")
    _add_grid_options(p, 128)
    p.add_argument("--hdf5", action="store_true", help="also archive the grid as HDF5")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_solve_fpe)

    p = sub.add_parser("pfode", help="probability-flow particle transport")
    p.add_argument("--pgrid", required=True, type=Path)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--closure", default="zero", help="closure used for the density grid")
    p.add_argument("--t0", type=float, default=None, help="start time; default 10 solver steps after the first level")
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--dt", type=float, default=None, help="RK4 step; defaults to the solver step of the grid")
    p.add_argument("--nparticles", type=int, default=10_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--margin", type=float, default=0.01, help="boundary probe distance as a fraction of rho_max")
    p.add_argument("--bins", type=int, default=100)
    _add_grid_options(p, 128)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_pfode)

    p = sub.add_parser("train", help="physics-informed score matching")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--obs", required=True, type=Path)
    p.add_argument("--train-config", type=Path, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--learn-noise", action="store_true")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--log", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="summary statistics from a trained score")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--rho-c", type=float, default=None, help="critical density (default: capacity point)")
    p.add_argument("--nq", type=int, default=100)
    p.add_argument("--flow-out", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("validate", help="check the standing assumptions of a model")
    p.add_argument("--config", required=True, type=Path)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("triangle", help="Monte Carlo / Fokker-Planck / probability-flow consistency")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--nreal", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_triangle)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run one command and map exceptions to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIGURATION
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"slwr: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigurationError, DomainError, FileNotFoundError) as exc:
        print(f"slwr: {exc}", file=sys.stderr)
        return EXIT_CONFIGURATION
    except NumericalError as exc:
        print(f"slwr: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RuntimeError, ValueError) as exc:
        print(f"slwr: {exc}", file=sys.stderr)
        return EXIT_CONFIGURATION


def main() -> None:
    """Console entry point."""
    sys.exit(dispatch())
