"""Monte Carlo and closed-form oracles for stationary laws.

Euler-Maruyama with componentwise projection handles normal reflection at the
orthant faces and barrier (upper reflection) policies; the pushed amounts are
tallied as local-time and control rates.  For one-dimensional barrier policies
the stationary law and control rate also follow in closed form from the speed
measure.
"""
from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from . import _backend, io
from .expr import pack_programs
from .grid import make_uniform_grid
from .model import Case, Domain

log = logging.getLogger(__name__)


class StepTooLarge(RuntimeError):
    pass


class SimulationDiverged(RuntimeError):
    pass


class SingularDiffusion(ValueError):
    pass


class SingularDiffusionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NoControl:
    pass


@dataclass(frozen=True)
class Barrier:
    """Reflect downward at level ``c`` on each axis (``inf`` for no barrier)."""

    c: tuple

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(np.atleast_1d(np.asarray(self.c, float))))


@dataclass
class EmpiricalMeasure:
    grid: object
    weights: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    outside_fraction: float
    mean: np.ndarray
    variance: np.ndarray
    mean_stderr: np.ndarray
    control_rate: np.ndarray
    control_rate_stderr: np.ndarray
    reflection_rate: np.ndarray
    reflection_rate_stderr: np.ndarray
    seeds: list
    burn_in: float
    total_time: float
    dt: float
    n_paths: int
    backend: str
    batch_means: np.ndarray = field(default=None, repr=False)

    def stats(self):
        return {
            "mean": self.mean, "variance": self.variance, "stderr": self.mean_stderr,
            "control_rate": self.control_rate, "control_rate_stderr": self.control_rate_stderr,
            "reflection_rate": self.reflection_rate,
            "reflection_rate_stderr": self.reflection_rate_stderr,
            "outside_fraction": self.outside_fraction, "total_time": self.total_time,
            "burn_in": self.burn_in, "dt": self.dt, "n_paths": self.n_paths,
            "seeds": self.seeds,
        }


def _normal_reflection_only(spec, grid):
    if spec.d2 == 0:
        return
    X = grid.points()
    phi = spec.phi_values(X)
    for j in range(spec.d2):
        face = X[:, j] == grid.lo[j]
        p = phi[face][:, :, j]
        off = np.delete(p, j, axis=1)
        if np.any(off != 0) or np.any(p[:, j] <= 0):
            raise ValueError("simulation supports normal reflection at x_j = 0 only")


def _refine(z, rngs):
    """Brownian-bridge refinement: each level halves the step and doubles the count."""
    for rng in rngs:
        zp = rng.standard_normal(z.shape)
        fine = np.empty((z.shape[0] * 2,) + z.shape[1:])
        fine[0::2] = (z + zp) / np.sqrt(2.0)
        fine[1::2] = (z - zp) / np.sqrt(2.0)
        z = fine
    return z


def simulate_stationary(spec, policy=None, T=1000.0, dt=0.01, n_paths=4, seed=0, grid=None,
                        x0=None, burn_in=0.2, batches=10, bridge_levels=0, threads=1,
                        backend=None, chunk=4096):
    """Long-run occupancy of the (possibly barrier-controlled) diffusion on ``grid``."""
    policy = NoControl() if policy is None else policy
    kern = _backend.get_kernels(backend)
    name = "cython" if kern is not _backend._kernels_py else "python"
    d = spec.d
    if grid is None:
        grid = make_uniform_grid(spec.box, 201 if d == 1 else 41)
    _normal_reflection_only(spec, grid)
    ops, args, starts = pack_programs(list(spec.drift) + [e for row in spec.diffusion
                                                          for e in row])
    clamp_lo = np.full(d, -np.inf)
    if spec.domain is Domain.NONNEGATIVE_ORTHANT:
        clamp_lo[:] = 0.0
    clamp_hi = np.full(d, np.inf)
    if isinstance(policy, Barrier):
        c = np.broadcast_to(np.asarray(policy.c, float), (d,))
        clamp_hi = np.array(c, dtype=float)
    lo, hi = np.asarray(spec.lo), np.asarray(spec.hi)
    max_step = 0.5 * float(np.linalg.norm(hi - lo))
    if x0 is None:
        x0 = np.minimum(0.5 * (lo + hi), clamp_hi)
    x = np.tile(np.asarray(x0, float), (n_paths, 1))
    x = np.ascontiguousarray(np.clip(x, clamp_lo, clamp_hi))

    mids = np.concatenate([0.5 * (a[1:] + a[:-1]) for a in grid.axes])
    mid_start = np.cumsum([0] + [a.size - 1 for a in grid.axes]).astype(np.int64)
    strides = np.array([int(np.prod(grid.shape[k + 1:])) for k in range(d)], dtype=np.int64)

    N = int(round(T / dt))
    burn = int(burn_in * N)
    R = N - burn
    if R < batches:
        raise ValueError("too few recorded steps for the requested number of batches")
    edges = burn + (np.arange(batches + 1) * R) // batches
    segments = [(0, burn, -1)] + [(edges[b], edges[b + 1], b) for b in range(batches)]
    L = int(bridge_levels)
    fine_dt = dt / 2 ** L
    d1 = spec.d1
    base_rngs = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(p,))))
                 for p in range(n_paths)]
    bridge_rngs = [[np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(p, lev)))) for lev in range(1, L + 1)]
        for p in range(n_paths)]
    status = np.zeros(n_paths, dtype=np.int64)
    B = batches
    counts = np.zeros((B, n_paths, grid.n + 1), dtype=np.int64)
    push_lo = np.zeros((B, n_paths, d))
    push_hi = np.zeros((B, n_paths, d))
    s1 = np.zeros((B, n_paths, d))
    s2 = np.zeros((B, n_paths, d))
    scratch = [np.zeros((n_paths, grid.n + 1), dtype=np.int64)] + \
        [np.zeros((n_paths, d)) for _ in range(4)]
    for start, stop, b in segments:
        rec = b >= 0
        acc = (counts[b], push_lo[b], push_hi[b], s1[b], s2[b]) if rec else scratch
        for s0 in range(start, stop, chunk):
            S = min(chunk, stop - s0)
            z = np.empty((n_paths, S * 2 ** L, d1))
            for p in range(n_paths):
                zb = base_rngs[p].standard_normal((S, d1))
                z[p] = _refine(zb, bridge_rngs[p])
            kern.advance(x, z, fine_dt, ops, args, starts, clamp_lo, clamp_hi, max_step,
                         int(rec), mids, mid_start, strides, grid.lo, grid.hi, *acc, status,
                         threads)
            if np.any(status):
                break
        if np.any(status):
            break
    if np.any(status == 1):
        raise StepTooLarge(f"an Euler increment exceeded half the box diameter ({max_step:g}); "
                           "reduce dt")
    if np.any(status):
        raise SimulationDiverged("non-finite state encountered; check coefficients and dt")

    steps = np.array([(edges[b + 1] - edges[b]) * 2 ** L for b in range(B)], dtype=float)
    units = B * n_paths
    steps_u = np.repeat(steps, n_paths)
    c_u = counts.reshape(units, -1).astype(float)
    total = float(steps_u.sum())
    weights = c_u[:, :grid.n].sum(axis=0) / total
    freq = c_u[:, :grid.n] / steps_u[:, None]
    stderr = freq.std(axis=0, ddof=1) / np.sqrt(units) if units > 1 else np.full(grid.n, np.nan)
    s1u = s1.reshape(units, d)
    s2u = s2.reshape(units, d)
    mean = s1u.sum(axis=0) / total
    variance = s2u.sum(axis=0) / total - mean ** 2
    bm = s1u / steps_u[:, None]
    se = lambda v: v.std(axis=0, ddof=1) / np.sqrt(units) if units > 1 else np.nan  # noqa: E731
    time_u = steps_u * fine_dt
    hi_rate_u = push_hi.reshape(units, d) / time_u[:, None]
    lo_rate_u = push_lo.reshape(units, d) / time_u[:, None]
    return EmpiricalMeasure(
        grid=grid, weights=weights, stderr=stderr, counts=c_u.sum(axis=0),
        outside_fraction=float(c_u[:, grid.n].sum() / total),
        mean=mean, variance=variance, mean_stderr=se(bm),
        control_rate=push_hi.reshape(units, d).sum(axis=0) / (total * fine_dt),
        control_rate_stderr=se(hi_rate_u),
        reflection_rate=push_lo.reshape(units, d).sum(axis=0) / (total * fine_dt),
        reflection_rate_stderr=se(lo_rate_u),
        seeds=[{"entropy": int(seed), "spawn_key": [p]} for p in range(n_paths)],
        burn_in=burn_in, total_time=float(R * dt * n_paths), dt=dt, n_paths=n_paths,
        backend=name, batch_means=bm)


def write_empirical(em, outdir):
    io.ensure_dir(outdir)
    io.write_measure(os.path.join(outdir, "nu.csv"), em.grid, em.weights)
    io.write_json(os.path.join(outdir, "stats.json"), em.stats())


# ----------------------------------------------------------- barrier oracle

@dataclass
class BarrierValue:
    c: float
    value: float
    running: float
    control: float
    flux: float
    control_rate: float
    drift_integral: float
    x: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    richardson_error: float = float("nan")
    cutoff: float = 0.0


def _barrier_once(spec, c, a, n):
    xs = np.linspace(a, c, n)
    X = xs[:, None]
    sig2 = spec.a_values(X)[:, 0, 0]
    beta = spec.drift_values(X)[:, 0]
    r = 2.0 * beta / sig2
    # log of the speed density relative to its value at c
    C = cumulative_simpson(r, x=xs, initial=0.0)
    Lx = np.log(sig2[-1]) - np.log(sig2) + (C - C[-1])
    Lx -= Lx.max()
    w = np.exp(Lx)
    Z = simpson(w, x=xs)
    dens = w / Z
    flux = 0.5 * sig2[-1] * dens[-1]
    gam = spec.gamma_values(np.array([[c]]))[0, 0, 0]
    rate = flux / gam
    running = float(simpson(spec.running_cost_values(X) * dens, x=xs))
    g = float(spec.control_cost_values(np.array([[c]]))[0, 0])
    drift_int = float(simpson(beta * dens, x=xs))
    return running, g * rate, flux, rate, drift_int, xs, dens


def barrier_policy_value(spec, c, nodes=4001, cutoff=None):
    """Stationary reward of reflecting at ``c`` computed from the speed measure.

    Simpson's rule on ``nodes`` points; the Richardson estimate compares with half as many.
    """
    if spec.d != 1:
        raise ValueError("barrier oracle is one-dimensional")
    if spec.d3 != 1:
        raise ValueError("barrier oracle needs exactly one control direction")
    lo = spec.lo[0]
    if not c > lo:
        raise ValueError("barrier must lie above the left end of the box")
    a = lo if cutoff is None else float(cutoff)
    probe = np.linspace(a, c, 257)[:, None]
    sig2 = spec.a_values(probe)[:, 0, 0]
    if np.any(sig2[1:] <= 0):
        raise SingularDiffusion("diffusion vanishes inside (lo, c]; no speed measure")
    if sig2[0] <= 0:
        a = lo + 1e-4 * (c - lo)
        warnings.warn(f"diffusion vanishes at {lo:g}; using left cutoff {a:g}",
                      SingularDiffusionWarning, stacklevel=2)
    nodes = nodes if nodes % 2 == 1 else nodes + 1
    fine = _barrier_once(spec, c, a, nodes)
    coarse = _barrier_once(spec, c, a, (nodes - 1) // 2 + 1)
    v_f = fine[0] + fine[1]
    v_c = coarse[0] + coarse[1]
    return BarrierValue(c=float(c), value=v_f, running=fine[0], control=fine[1], flux=fine[2],
                        control_rate=fine[3], drift_integral=fine[4], x=fine[5],
                        density=fine[6], richardson_error=abs(v_f - v_c) / 15.0, cutoff=a)


def barrier_sweep(spec, levels, nodes=4001):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingularDiffusionWarning)
        vals = [barrier_policy_value(spec, c, nodes) for c in levels]
    sense = max if spec.case is Case.MAX_HARVESTING else min
    best = sense(vals, key=lambda v: v.value)
    return best, vals
