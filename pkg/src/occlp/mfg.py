"""Mean-field equilibria by damped best-response iteration."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import io
from .generator import assemble
from .solver import build_lp, solve_stationary

log = logging.getLogger(__name__)

MIN_DAMPING = 1.0 / 64.0


class MismatchedGrids(ValueError):
    pass


class NotConverged(RuntimeError):
    def __init__(self, message, history, result=None):
        super().__init__(message)
        self.history = history
        self.result = result


def w1_sorted(x, wa, wb):
    """Wasserstein-1 between two weight vectors on the same sorted 1-D support."""
    F = np.cumsum(np.asarray(wa, float) - np.asarray(wb, float))
    return float(np.sum(np.abs(F[:-1]) * np.diff(x)))


def equilibrium_residual(nu_a, nu_b, grid, grid_b=None):
    """Transport distance between two grid measures.

    Exact W1 in one dimension; the sum of per-axis marginal W1 distances otherwise.
    """
    if grid_b is not None and not grid.same_as(grid_b):
        raise MismatchedGrids("measures live on different grids")
    nu_a = np.asarray(nu_a, float)
    nu_b = np.asarray(nu_b, float)
    if nu_a.shape != (grid.n,) or nu_b.shape != (grid.n,):
        raise MismatchedGrids("weight vectors do not match the grid size")
    a = nu_a.reshape(grid.shape)
    b = nu_b.reshape(grid.shape)
    total = 0.0
    for k, ax in enumerate(grid.axes):
        other = tuple(j for j in range(grid.d) if j != k)
        total += w1_sorted(ax, a.sum(axis=other), b.sum(axis=other))
    return total


def moments_of(nu, grid):
    return np.asarray(nu, float) @ grid.points()


def best_response(spec, grid, cgrid, nu_tilde, generator=None, basis=None, tol=1e-8):
    """Optimal stationary solution with costs frozen at the moments of ``nu_tilde``."""
    nu_tilde = np.asarray(nu_tilde, float)
    if np.any(nu_tilde < -1e-12) or abs(nu_tilde.sum() - 1.0) > 1e-9:
        raise ValueError("nu_tilde must be probability weights")
    m = moments_of(nu_tilde, grid)
    sol = solve_stationary(spec, grid, cgrid, generator=generator, moments=m, tol=tol,
                           basis=basis)
    return sol


@dataclass
class MFGResult:
    nu: np.ndarray
    mu: list
    best_response: object
    history: list
    converged: bool
    iterations: int
    residual: float
    value_gap: float
    damping: list = field(default_factory=list)

    @property
    def value(self):
        return self.best_response.value


def _objective(spec, grid, gen, moments, nu, mu):
    lp, layout = build_lp(spec, grid, gen, moments)
    x = np.concatenate([nu] + list(mu) + [np.zeros(b.rows) for b in gen.R])
    return float(lp.c[:x.size] @ x)


def find_equilibrium(spec, grid, cgrid, nu0=None, alpha0=1.0, tol=1e-3, max_iter=100,
                     value_tol=1e-6, raise_on_failure=True):
    """Damped iteration nu <- (1 - a) nu + a nu(BR(nu)).

    The first update is a full step so that every iterate after it is a convex
    combination of feasible stationary solutions.
    """
    if not 0 < alpha0 <= 1:
        raise ValueError("damping must lie in (0, 1]")
    gen = assemble(spec, grid, cgrid)
    nu = np.full(grid.n, 1.0 / grid.n) if nu0 is None else np.asarray(nu0, float).copy()
    br = best_response(spec, grid, cgrid, nu, generator=gen)
    history = []
    dampings = []
    alpha = alpha0
    prev = np.inf
    rises = 0
    mu = None
    for k in range(1, max_iter + 1):
        step = 1.0 if k == 1 else alpha
        if k == 1:
            nu = br.nu.copy()
            mu = [m.copy() for m in br.mu]
        else:
            nu = (1.0 - step) * nu + step * br.nu
            mu = [(1.0 - step) * a + step * b for a, b in zip(mu, br.mu)]
            nu = np.maximum(nu, 0.0)
            nu /= nu.sum()
        if spec.uses_moments():
            br = best_response(spec, grid, cgrid, nu, generator=gen, basis=br.lp.basis)
        # without coupling the best response does not depend on nu
        res = equilibrium_residual(nu, br.nu, grid)
        m = moments_of(nu, grid)
        gap = abs(br.value - _objective(spec, grid, gen, m, nu, mu))
        history.append((k, res, br.value, step, gap))
        dampings.append(step)
        log.info("mfg iteration %d residual %.3e value %.10g damping %.4g", k, res,
                 br.value, step)
        if res <= tol and gap <= value_tol:
            return MFGResult(nu, mu, br, history, True, k, res, gap, dampings)
        if k > 1:
            rises = rises + 1 if res > prev else 0
            if rises >= 2:
                alpha = max(alpha / 2.0, MIN_DAMPING)
                rises = 0
        prev = res
    result = MFGResult(nu, mu, br, history, False, max_iter, history[-1][1],
                       history[-1][4], dampings)
    if raise_on_failure:
        raise NotConverged(f"no equilibrium within {max_iter} iterations "
                           f"(last residual {history[-1][1]:.3e})", history, result)
    return result


def write_history(path, history):
    io.write_csv(path, ["iter", "residual", "value", "damping"],
                 [[h[0] for h in history], [h[1] for h in history],
                  [h[2] for h in history], [h[3] for h in history]])


def write_result(result, grid, outdir):
    io.ensure_dir(outdir)
    write_history(os.path.join(outdir, "residual_history.csv"), result.history)
    io.write_measure(os.path.join(outdir, "nu.csv"), grid, result.nu)
