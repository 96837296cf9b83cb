"""Command line: ``occlp {solve,mfg,simulate,validate} --config FILE --out DIR``.

Exit status 0 on success, 2 for configuration errors, 3 when the run finished
without a usable answer (infeasible, unbounded, not converged); a report is
written in that case too.  OCCLP_LOG_LEVEL sets the log verbosity.
"""
from __future__ import annotations

import argparse
import datetime
import logging
import os
import sys
import warnings

import numpy as np
from scipy.stats import norm

from . import io
from .config import ConfigError, load_config, mfg_spec
from .expr import ExpressionDomainError
from .generator import NoGenuineBoundary, NonMonotoneScheme, assemble
from .lp import NumericalFailure
from .mfg import NotConverged, find_equilibrium, write_result
from .model import Case, validate_spec
from .sim import (Barrier, NoControl, SimulationDiverged, SingularDiffusionWarning,
                  StepTooLarge, barrier_sweep, simulate_stationary, write_empirical)
from .solver import (Infeasible, SolverError, Unbounded, solution_report, solve_stationary,
                     write_solution)

log = logging.getLogger("occlp")

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 2, 3


def _timestamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _report(outdir, command, body):
    body = dict(body)
    body["command"] = command
    body["timestamp"] = _timestamp()
    io.write_json(os.path.join(outdir, "report.json"), body)


def analytic_density(spec, x):
    """Closed-form stationary density for the builtin examples that have one."""
    p = spec.params
    if spec.name == "reflected_ou":
        k = np.sqrt(2 * float(p["theta"])) / float(p["sigma"])
        return 2 * k * norm.pdf(k * x)
    if spec.name == "ou" and spec.d == 1:
        return norm.pdf(x, scale=float(p["sigma"]) / np.sqrt(2 * float(p["theta"])))
    return None


def _plotdata(outdir, grid, nu, analytic):
    x = grid.axes[0]
    dens = nu / grid.cell_volumes()
    cols = [x, dens]
    header = ["x", "nu_density"]
    if analytic is not None:
        header.append("analytic_density")
        cols.append(analytic)
    io.write_csv(os.path.join(outdir, "plotdata.csv"), header, cols)


def cmd_solve(cfg, args):
    spec, grid, cgrid = cfg.spec, cfg.grid, cfg.cgrid
    try:
        sol = solve_stationary(spec, grid, cgrid, tol=float(cfg.solve.get("tol", 1e-8)))
    except (Infeasible, Unbounded, SolverError, NumericalFailure) as exc:
        _report(args.out, "solve", {"model": spec.name, "status": type(exc).__name__.lower(),
                                    "message": str(exc),
                                    "residual": getattr(exc, "residual", None)})
        log.error("%s", exc)
        return EXIT_FAILED
    write_solution(sol, spec, grid, args.out)
    rep = solution_report(sol, spec, grid)
    analytic = None
    if grid.d == 1:
        analytic = analytic_density(spec, grid.axes[0])
        if analytic is None and spec.case is Case.MAX_HARVESTING and spec.d3 == 1:
            levels = np.linspace(grid.hi[0] / 50, grid.hi[0], 50)
            best, _ = barrier_sweep(spec, levels)
            rep["barrier_oracle"] = {"level": best.c, "value": best.value,
                                     "richardson_error": best.richardson_error,
                                     "lp_relative_gap": (sol.value - best.value)
                                     / max(abs(best.value), 1e-300)}
            analytic = np.interp(grid.axes[0], best.x, best.density, right=0.0)
        _plotdata(args.out, grid, sol.nu, analytic)
    _report(args.out, "solve", rep)
    return EXIT_OK


def cmd_mfg(cfg, args):
    spec = mfg_spec(cfg)
    m = cfg.mfg
    choice = m.get("nu0", "uniform")
    if choice not in ("uniform", "uncontrolled"):
        raise ConfigError("mfg.nu0", None, "expected 'uniform' or 'uncontrolled'")
    try:
        nu0 = None
        if choice == "uncontrolled":
            nu0 = solve_stationary(spec, cfg.grid, cfg.cgrid, moments=np.zeros(spec.d),
                                   allow_control=False).nu
        res = find_equilibrium(spec, cfg.grid, cfg.cgrid, nu0=nu0,
                               alpha0=float(m.get("damping", 1.0)), tol=float(m.get("tol", 1e-3)),
                               max_iter=int(m.get("max_iter", 100)),
                               value_tol=float(m.get("value_tol", 1e-6)))
        status, code = "converged", EXIT_OK
    except NotConverged as exc:
        res = exc.result
        status, code = "not_converged", EXIT_FAILED
    except (Infeasible, Unbounded, SolverError, NumericalFailure) as exc:
        _report(args.out, "mfg", {"model": spec.name, "status": type(exc).__name__.lower(),
                                  "message": str(exc)})
        return EXIT_FAILED
    write_result(res, cfg.grid, args.out)
    _report(args.out, "mfg", {
        "model": spec.name, "status": status, "iterations": res.iterations,
        "residual": res.residual, "value": res.value, "value_gap": res.value_gap,
        "damping": res.damping, "mean": (res.nu @ cfg.grid.points()).tolist(),
    })
    if cfg.grid.d == 1:
        _plotdata(args.out, cfg.grid, res.nu, None)
    return code


def cmd_simulate(cfg, args):
    s = cfg.sim
    pol = s.get("policy", "none")
    policy = NoControl()
    if pol == "barrier" or "barrier" in s:
        if "barrier" not in s:
            raise ConfigError("sim.barrier", None, "barrier policy needs a level")
        policy = Barrier(s["barrier"])
    seed = args.seed if args.seed is not None else int(s.get("seed", 0))
    try:
        em = simulate_stationary(cfg.spec, policy, T=float(s.get("T", 1000.0)),
                                 dt=float(s.get("dt", 0.01)), n_paths=int(s.get("paths", 4)),
                                 seed=seed, grid=cfg.grid, x0=s.get("x0"),
                                 burn_in=float(s.get("burn_in", 0.2)),
                                 batches=int(s.get("batches", 10)),
                                 bridge_levels=int(s.get("bridge_levels", 0)),
                                 threads=args.threads)
    except (StepTooLarge, SimulationDiverged, ExpressionDomainError) as exc:
        _report(args.out, "simulate", {"model": cfg.spec.name,
                                       "status": type(exc).__name__.lower(),
                                       "message": str(exc)})
        return EXIT_FAILED
    write_empirical(em, args.out)
    _report(args.out, "simulate", {"model": cfg.spec.name, "status": "ok",
                                   "stats": em.stats()})
    if cfg.grid.d == 1:
        _plotdata(args.out, cfg.grid, em.weights, analytic_density(cfg.spec, cfg.grid.axes[0]))
    return EXIT_OK


def cmd_validate(cfg, args):
    try:
        gen = assemble(cfg.spec, cfg.grid, cfg.cgrid)
    except (NonMonotoneScheme, NoGenuineBoundary) as exc:
        gen = None
        log.warning("discrete checks skipped: %s", exc)
    rep = validate_spec(cfg.spec, cfg.grid, generator=gen)
    _report(args.out, "validate", {"model": cfg.spec.name,
                                   "status": "passed" if rep.passed else "violations",
                                   "validation": rep.as_dict()})
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "mfg": cmd_mfg, "simulate": cmd_simulate,
            "validate": cmd_validate}


def build_parser():
    ap = argparse.ArgumentParser(prog="occlp", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override sim.seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for simulation")
    return ap


def main(argv=None):
    logging.basicConfig(level=os.environ.get("OCCLP_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        io.ensure_dir(args.out)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingularDiffusionWarning)
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
