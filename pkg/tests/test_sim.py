import json
import warnings

import numpy as np
import pytest
from scipy.stats import gamma

from occlp import _backend
from occlp.grid import make_uniform_grid
from occlp.model import ProblemSpec, builtin_model
from occlp.sim import (Barrier, SimulationDiverged, SingularDiffusion, SingularDiffusionWarning,
                       StepTooLarge, barrier_policy_value, barrier_sweep, simulate_stationary,
                       write_empirical)

ROOT2 = repr(2 ** 0.5)


def brownian(g="1", hi=2.0):
    return ProblemSpec(d=1, case="max", drift=["0"], diffusion=[[ROOT2]], control_dirs=[["1"]],
                       control_cost=[g], gamma_lower_bound=1, domain="orthant", lo=[0], hi=[hi])


def logistic_barrier_oracle(c, s0=0.2):
    # speed density of the logistic model is a Gamma(2/s0^2 - 1, s0^2/2) law truncated to (0, c]
    k, scale = 2 / s0 ** 2 - 1, s0 ** 2 / 2
    p = gamma.pdf(c, k, scale=scale) / gamma.cdf(c, k, scale=scale)
    return 0.5 * (s0 * c) ** 2 * p


def test_ou_stationary_variance():
    spec = builtin_model("ou", {"theta": 1, "sigma": 1})
    em = simulate_stationary(spec, T=2000, dt=0.01, n_paths=4, seed=0)
    assert abs(em.variance[0] - 0.5) <= 0.05
    assert abs(em.weights.sum() - 1) <= 1e-12


@pytest.fixture(scope="module")
def reflected():
    spec = builtin_model("reflected_ou", {"theta": 1, "sigma": 2 ** 0.5})
    return spec, simulate_stationary(spec, T=2000, dt=0.001, n_paths=4, seed=0)


def test_reflected_ou_mean(reflected):
    _, em = reflected
    assert abs(em.mean[0] - np.sqrt(2 / np.pi)) <= 0.05
    assert em.reflection_rate[0] > 0


def test_dt_halving_moves_mean_less_than_stderr(reflected):
    spec, em = reflected
    fine = simulate_stationary(spec, T=2000, dt=0.001, n_paths=4, seed=0, bridge_levels=1)
    assert abs(fine.mean[0] - em.mean[0]) < max(em.mean_stderr[0], fine.mean_stderr[0])


def test_frozen_dynamics_point_mass():
    spec = ProblemSpec(d=1, case="min", drift=["0"], diffusion=[["0"]], lo=[0], hi=[1])
    grid = make_uniform_grid([0, 1], 11)
    em = simulate_stationary(spec, T=10, dt=0.01, n_paths=2, seed=0, grid=grid, x0=[0.7])
    assert em.weights[7] == 1.0
    assert em.variance[0] == pytest.approx(0.0, abs=1e-12)


def test_step_too_large():
    spec = ProblemSpec(d=1, case="min", drift=["-x1"], diffusion=[["50"]], lo=[-1], hi=[1])
    with pytest.raises(StepTooLarge):
        simulate_stationary(spec, T=1, dt=0.01, n_paths=2, seed=0)


def test_divergence_reported():
    spec = ProblemSpec(d=1, case="min", drift=["x1^3"], diffusion=[["0"]], lo=[-1e200],
                       hi=[1e200])
    with pytest.raises(SimulationDiverged):
        simulate_stationary(spec, T=100, dt=0.5, n_paths=1, seed=0, x0=[1e100],
                            grid=make_uniform_grid([-1, 1], 3))


def test_reproducible_and_schedule_independent():
    spec = builtin_model("ou", {"theta": 1, "sigma": 1, "d": 2})
    kw = dict(T=50, dt=0.01, n_paths=3, seed=42, grid=make_uniform_grid([[-3, 3]] * 2, 13))
    a = simulate_stationary(spec, **kw)
    b = simulate_stationary(spec, threads=3, **kw)
    c = simulate_stationary(spec, chunk=7, **kw)
    for other in (b, c):
        assert np.array_equal(a.counts, other.counts)
        assert np.array_equal(a.mean, other.mean)
    d = simulate_stationary(spec, **dict(kw, seed=43))
    assert not np.array_equal(a.counts, d.counts)


@pytest.mark.skipif(_backend.BACKEND != "cython", reason="compiled kernel not built")
def test_backends_agree_bitwise():
    spec = builtin_model("logistic_harvest", {"sigma0": 0.2})
    kw = dict(policy=Barrier(0.6), T=20, dt=0.01, n_paths=3, seed=7)
    a = simulate_stationary(spec, backend="cython", **kw)
    b = simulate_stationary(spec, backend="python", **kw)
    assert a.backend == "cython" and b.backend == "python"
    assert np.array_equal(a.counts, b.counts)
    assert np.array_equal(a.control_rate, b.control_rate)
    assert np.array_equal(a.mean, b.mean)


def test_oblique_reflection_rejected():
    spec = builtin_model("rbm", {"b": [-1, -1], "sigma": 1, "R": [[1, 0.5], [0, 1]]})
    with pytest.raises(ValueError, match="normal reflection"):
        simulate_stationary(spec, T=1, dt=0.01, grid=make_uniform_grid([[0, 5]] * 2, 5))


def test_brownian_barrier_oracle():
    bv = barrier_policy_value(brownian(), 1.0)
    assert bv.value == pytest.approx(1.0, abs=1e-12)
    assert bv.flux == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(bv.density, 1.0, atol=1e-12)
    assert bv.richardson_error < 1e-12


def test_barrier_value_linear_in_control_cost():
    one = barrier_policy_value(brownian("1"), 0.8)
    two = barrier_policy_value(brownian("2"), 0.8)
    assert two.control == 2 * one.control


@pytest.mark.parametrize("c", [0.3, 0.52, 1.0, 1.7])
def test_logistic_barrier_matches_gamma_closed_form(c):
    spec = builtin_model("logistic_harvest", {"sigma0": 0.2})
    with pytest.warns(SingularDiffusionWarning):
        bv = barrier_policy_value(spec, c)
    assert bv.value == pytest.approx(logistic_barrier_oracle(c), rel=1e-8)
    assert bv.richardson_error < 1e-8


def test_barrier_oracle_errors():
    spec = ProblemSpec(d=1, case="max", drift=["0"], diffusion=[["max(x1-1, 0) + max(0.5-x1, 0)"]],
                       control_dirs=[["1"]], control_cost=["1"], gamma_lower_bound=1,
                       domain="orthant", lo=[0], hi=[2])
    with pytest.raises(SingularDiffusion):
        barrier_policy_value(spec, 1.5)
    with pytest.raises(ValueError):
        barrier_policy_value(brownian(), 0.0)


@pytest.mark.slow
def test_brownian_barrier_matches_simulation():
    em = simulate_stationary(brownian(), Barrier(1.0), T=2000, dt=1e-4, n_paths=4, seed=1)
    bv = barrier_policy_value(brownian(), 1.0)
    assert abs(em.control_rate[0] - bv.flux) <= 3 * em.control_rate_stderr[0]


def test_logistic_sweep_records_optimum():
    spec = builtin_model("logistic_harvest", {"sigma0": 0.2})
    levels = np.linspace(0.04, 2.0, 50)
    best, vals = barrier_sweep(spec, levels)
    assert len(vals) == 50
    ref = [logistic_barrier_oracle(c) for c in levels]
    assert best.c == levels[int(np.argmax(ref))]
    assert best.value == pytest.approx(max(ref), rel=1e-8)


def test_write_empirical(tmp_path):
    spec = builtin_model("ou", {"theta": 1, "sigma": 1})
    em = simulate_stationary(spec, T=20, dt=0.01, n_paths=2, seed=0)
    write_empirical(em, tmp_path)
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert {"mean", "variance", "stderr", "seeds"} <= set(stats)
    assert (tmp_path / "nu.csv").read_text().startswith("node_index,x1,weight")
