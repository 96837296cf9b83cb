"""Stationary measure linear program and reports on its solution."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import io
from .generator import assemble
from .lp import LinearProgram, LPStatus, solve_lp
from .model import Case, structural_problems, tail_estimate

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class StructuralViolation(SolverError):
    pass


class Infeasible(SolverError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class Unbounded(SolverError):
    pass


@dataclass
class MeasureSolution:
    nu: np.ndarray
    mu: list
    lam: list
    value: float
    residual: float
    mass_error: float
    case: Case
    grid: object
    cgrid: object
    generator: object
    lp: object = None
    moments: np.ndarray | None = None
    admissible: bool | None = None
    admissibility_value: float = float("nan")
    extras: dict = field(default_factory=dict)

    def moment_vector(self):
        return self.nu @ self.grid.points()

    def control_mass(self):
        return np.array([float(m.sum()) for m in self.mu])


def build_lp(spec, grid, gen, moments=None, allow_control=True):
    """Assemble the stationary LP; returns (LinearProgram, column layout)."""
    X = grid.points()
    S = gen.stationarity_operator()
    m = None if moments is None else np.asarray(moments, dtype=float)
    blocks_T = [S.T]
    costs = [spec.running_cost_values(X, m)]
    layout = [("nu", None, grid.n)]
    if allow_control:
        g = spec.control_cost_values(X, m)
        for i, blk in enumerate(gen.B):
            blocks_T.append(blk.matrix.T)
            costs.append(g[blk.node, i])
            layout.append(("mu", i, blk.rows))
    f = spec.intrinsic_cost_values(X, m)
    for j, blk in enumerate(gen.R):
        blocks_T.append(blk.matrix.T)
        costs.append(f[blk.node, j])
        layout.append(("lam", j, blk.rows))
    top = sp.hstack(blocks_T).tocsr()
    ncols = top.shape[1]
    mass = sp.csr_matrix((np.ones(grid.n), (np.zeros(grid.n, dtype=int), np.arange(grid.n))),
                         shape=(1, ncols))
    A_eq = sp.vstack([top, mass]).tocsr()
    b_eq = np.zeros(grid.n + 1)
    b_eq[-1] = 1.0
    c = np.concatenate(costs)
    A_ge = b_ge = None
    sense = "min"
    if spec.case is Case.MAX_HARVESTING:
        sense = "max"
        QV = S @ spec.lyapunov(X)
        A_ge = sp.csr_matrix((QV, (np.zeros(grid.n, dtype=int), np.arange(grid.n))),
                             shape=(1, ncols))
        b_ge = np.zeros(1)
    return LinearProgram(c, A_eq, b_eq, A_ge, b_ge, sense), layout


def stationarity_residual(gen, nu, mu, lam):
    r = gen.stationarity_operator().T @ nu
    for blk, w in zip(gen.B, mu):
        r = r + blk.matrix.T @ w
    for blk, w in zip(gen.R, lam):
        r = r + blk.matrix.T @ w
    return float(np.abs(r).max())


def solve_stationary(spec, grid, cgrid, generator=None, moments=None, tol=1e-8,
                     allow_control=True, basis=None):
    """Solve the stationary LP for ``spec`` on ``grid`` and ``cgrid``."""
    problems = structural_problems(spec)
    if problems:
        raise StructuralViolation("; ".join(problems))
    gen = generator if generator is not None else assemble(spec, grid, cgrid)
    lp, layout = build_lp(spec, grid, gen, moments, allow_control)
    res = solve_lp(lp, tol=tol, basis=basis)
    if res.status is LPStatus.INFEASIBLE:
        raise Infeasible("stationary LP is infeasible", residual=res.max_violation)
    if res.status is LPStatus.UNBOUNDED:
        raise Unbounded("stationary LP is unbounded")
    x = res.x
    parts = {}
    pos = 0
    for kind, i, size in layout:
        parts[(kind, i)] = x[pos:pos + size]
        pos += size
    nu = parts[("nu", None)]
    mu = [parts.get(("mu", i), np.zeros(blk.rows)) for i, blk in enumerate(gen.B)]
    lam = [parts[("lam", j)] for j in range(len(gen.R))]
    sol = MeasureSolution(
        nu=nu, mu=mu, lam=lam, value=res.value,
        residual=stationarity_residual(gen, nu, mu, lam),
        mass_error=abs(float(nu.sum()) - 1.0), case=spec.case, grid=grid, cgrid=cgrid,
        generator=gen, lp=res, moments=None if moments is None else np.asarray(moments))
    if spec.case is Case.MAX_HARVESTING:
        check_admissibility_case2(sol, spec, grid)
    return sol


def check_admissibility_case2(sol, spec, grid, tol=1e-6):
    """Value of (Q V)^T nu; the solution is flagged admissible when it is >= -tol."""
    QV = sol.generator.stationarity_operator() @ spec.lyapunov(grid.points())
    val = float(QV @ sol.nu)
    sol.admissibility_value = val
    sol.admissible = val >= -tol
    return val


@dataclass
class LyapunovReport:
    integral: float
    bound: float
    passed: bool
    slack: float
    band_mass: float
    tail_bound: float

    def as_dict(self):
        return dict(self.__dict__)


def lyapunov_moment_report(sol, spec, grid, tol=1e-6):
    V = spec.lyapunov(grid.points())
    integral = float(V @ sol.nu)
    bound = spec.k1 / spec.k2
    band = float(sol.nu[grid.boundary_mask()].sum())
    return LyapunovReport(integral, bound, integral <= bound + tol, bound - integral, band,
                          tail_estimate(spec, grid))


@dataclass
class MassReport:
    left: float
    right: float
    passed: bool
    slack: float
    gamma_bar: float

    def as_dict(self):
        return dict(self.__dict__)


def occupation_mass_report(sol, spec, grid, gamma_bar=None, tol=1e-6):
    """Compare gamma_bar * (total control mass) with the integral of |x1| + |beta1|."""
    gb = spec.gamma_lower_bound if gamma_bar is None else gamma_bar
    gb = 0.0 if gb is None else float(gb)
    X = grid.points()
    left = gb * float(sum(m.sum() for m in sol.mu))
    right = float((np.abs(X[:, 0]) + np.abs(spec.drift_values(X)[:, 0])) @ sol.nu)
    return MassReport(left, right, left <= right + tol, right - left, gb)


@dataclass
class Disintegration:
    marginal: np.ndarray
    kernel: np.ndarray
    sizes: np.ndarray

    def reconstruct(self):
        return self.kernel * self.marginal[:, None]


def disintegrate_occupation(weights, block, n_nodes, n_jumps):
    """Split an occupation measure into its state marginal and a jump-size kernel.

    Nodes without mass get a point mass on the infinitesimal entry.
    """
    joint = np.zeros((n_nodes, n_jumps))
    np.add.at(joint, (block.node, block.jump), weights)
    marginal = joint.sum(axis=1)
    kernel = np.zeros_like(joint)
    has = marginal > 0
    kernel[has] = joint[has] / marginal[has, None]
    kernel[~has, 0] = 1.0
    sizes = np.zeros((n_nodes, n_jumps))
    sizes[block.node, block.jump] = block.size
    return Disintegration(marginal, kernel, sizes)


def solution_report(sol, spec, grid):
    rep = {
        "model": spec.name,
        "case": spec.case.value,
        "status": "optimal",
        "value": sol.value,
        "residual": sol.residual,
        "mass_error": sol.mass_error,
        "lp": {"iterations": sol.lp.iterations, "max_violation": sol.lp.max_violation,
               "duality_gap": sol.lp.duality_gap},
        "control_mass": sol.control_mass().tolist(),
        "reflection_mass": [float(l.sum()) for l in sol.lam],
        "mean": sol.moment_vector().tolist(),
        "admissibility": None,
        "lyapunov_bound": None,
        "mass_bound": None,
        "tail_mass": tail_estimate(spec, grid),
        "grid": {"lo": grid.lo.tolist(), "hi": grid.hi.tolist(), "counts": list(grid.shape)},
    }
    if spec.case is Case.MAX_HARVESTING:
        rep["admissibility"] = {"value": sol.admissibility_value,
                                "admissible": sol.admissible}
        rep["lyapunov_bound"] = lyapunov_moment_report(sol, spec, grid).as_dict()
        rep["mass_bound"] = occupation_mass_report(sol, spec, grid).as_dict()
    return rep


def write_solution(sol, spec, grid, outdir):
    io.ensure_dir(outdir)
    io.write_measure(os.path.join(outdir, "nu.csv"), grid, sol.nu)
    X = grid.points()
    for i, (blk, w) in enumerate(zip(sol.generator.B, sol.mu)):
        io.write_csv(os.path.join(outdir, f"mu_{i + 1}.csv"),
                     ["node_index"] + [f"x{k + 1}" for k in range(grid.d)]
                     + ["jump_index", "jump_size", "weight"],
                     [blk.node] + [X[blk.node, k] for k in range(grid.d)]
                     + [blk.jump, blk.size, w])
    for j, (blk, w) in enumerate(zip(sol.generator.R, sol.lam)):
        io.write_csv(os.path.join(outdir, f"lambda_{j + 1}.csv"),
                     ["node_index"] + [f"x{k + 1}" for k in range(grid.d)] + ["weight"],
                     [blk.node] + [X[blk.node, k] for k in range(grid.d)] + [w])
