import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from occlp.lp import LinearProgram, LPStatus, solve_lp
from oracles import enumerate_bases, random_bounded_lp


def test_degenerate_segment():
    lp = LinearProgram([1, 1], [[1, 1]], [1])
    sol = solve_lp(lp)
    assert sol.status is LPStatus.OPTIMAL
    assert sol.value == pytest.approx(1.0, abs=1e-8)
    assert sol.x.min() >= -1e-10


def test_single_vertex_max():
    sol = solve_lp(LinearProgram([1, 0], [[1, 2]], [4], sense="max"))
    assert sol.value == pytest.approx(4.0, abs=1e-12)
    assert sol.x == pytest.approx([4.0, 0.0], abs=1e-12)


def test_infeasible_and_unbounded():
    assert solve_lp(LinearProgram([1, 1], [[1, 1]], [-1])).status is LPStatus.INFEASIBLE
    assert solve_lp(LinearProgram([-1, 0], [[1, -1]], [1])).status is LPStatus.UNBOUNDED
    ge = LinearProgram([1, 2], A_ge=[[1, 1]], b_ge=[3])
    sol = solve_lp(ge)
    assert sol.value == pytest.approx(3.0) and sol.x == pytest.approx([3, 0])


def test_six_by_three_matches_enumeration():
    rng = np.random.default_rng(6)
    A = rng.uniform(0.5, 2.0, (3, 6))
    b = A @ rng.uniform(0, 1, 6)
    c = rng.normal(size=6)
    best, _ = enumerate_bases(c, A, b)
    assert solve_lp(LinearProgram(c, A, b)).value == pytest.approx(best, abs=1e-8)


@pytest.mark.parametrize("seed", range(100))
def test_matches_basis_enumeration(seed):
    c, A, b, sense = random_bounded_lp(seed)
    best, _ = enumerate_bases(c, A, b, sense)
    sol = solve_lp(LinearProgram(c, A, b, sense=sense))
    if best is None:
        assert sol.status is LPStatus.INFEASIBLE
    else:
        assert sol.status is LPStatus.OPTIMAL
        assert sol.value == pytest.approx(best, abs=1e-8 * (1 + abs(best)))
        assert sol.max_violation <= 1e-8 * max(1.0, np.abs(b).max())
        assert sol.duality_gap <= 1e-8 * (1 + abs(sol.value))


def _lp_from_seed(seed, m, n, with_ge=True):
    rng = np.random.default_rng(seed)
    A = sp.random(m, n, density=0.3, random_state=rng, format="csr")
    A = A + sp.csr_matrix(np.eye(m, n))
    x0 = rng.uniform(0, 1, n)
    G = sp.random(2, n, density=0.5, random_state=rng, format="csr") if with_ge else None
    return LinearProgram(rng.normal(size=n) + 0.5, A, A @ x0, G,
                         None if G is None else G @ x0 - 0.1)


@pytest.mark.parametrize("seed", range(20))
def test_agrees_with_highs_on_sparse_instances(seed):
    lp = _lp_from_seed(seed, 30, 60)
    ref = linprog(lp.c, A_eq=lp.A_eq, b_eq=lp.b_eq, A_ub=-lp.A_ge, b_ub=-lp.b_ge,
                  method="highs")
    sol = solve_lp(lp)
    if ref.status == 3:
        assert sol.status is LPStatus.UNBOUNDED
    else:
        assert ref.status == 0
        assert sol.status is LPStatus.OPTIMAL
        assert sol.value == pytest.approx(ref.fun, abs=1e-7 * (1 + abs(ref.fun)))


def test_redundant_rows():
    A = np.array([[1.0, 1, 1], [2, 2, 2], [1, 0, -1]])
    sol = solve_lp(LinearProgram([1, 2, 3], A, [1, 2, 0]))
    assert sol.status is LPStatus.OPTIMAL
    assert sol.value == pytest.approx(2.0)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_sense_symmetry(seed):
    c, A, b, _ = random_bounded_lp(seed)
    mx = solve_lp(LinearProgram(c, A, b, sense="max"))
    mn = solve_lp(LinearProgram(-c, A, b, sense="min"))
    assert mx.status is mn.status
    if mx.status is LPStatus.OPTIMAL:
        assert mx.value == -mn.value
        assert np.array_equal(mx.x, mn.x)


@given(st.integers(0, 10_000), st.data())
@settings(max_examples=50, deadline=None)
def test_permutation_invariance(seed, data):
    c, A, b, sense = random_bounded_lp(seed)
    perm = np.array(data.draw(st.permutations(range(c.size))))
    a = solve_lp(LinearProgram(c, A, b, sense=sense))
    p = solve_lp(LinearProgram(c[perm], A[:, perm], b, sense=sense))
    assert a.status is p.status
    if a.status is LPStatus.OPTIMAL:
        assert p.value == pytest.approx(a.value, abs=1e-8 * (1 + abs(a.value)))


@given(st.integers(0, 10_000), st.sampled_from([0.25, 3.0, 1e3]))
@settings(max_examples=40, deadline=None)
def test_cost_scaling(seed, k):
    c, A, b, sense = random_bounded_lp(seed)
    a = solve_lp(LinearProgram(c, A, b, sense=sense))
    s = solve_lp(LinearProgram(k * c, A, b, sense=sense))
    assert a.status is s.status
    if a.status is LPStatus.OPTIMAL:
        assert s.value == pytest.approx(k * a.value, rel=1e-12, abs=1e-12 * k)


def test_deterministic_and_warm_start():
    lp = _lp_from_seed(3, 40, 90)
    a = solve_lp(lp)
    b = solve_lp(lp)
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations
    w = solve_lp(lp, basis=a.basis)
    assert w.value == pytest.approx(a.value, abs=1e-10)
    assert w.iterations - a.iterations <= 2


def test_dump_load_round_trip(tmp_path):
    lp = _lp_from_seed(4, 10, 20)
    p = tmp_path / "lp.txt"
    lp.dump(p)
    back = LinearProgram.load(p)
    assert np.array_equal(back.c, lp.c) and np.array_equal(back.b_ge, lp.b_ge)
    assert (back.A_eq != lp.A_eq).nnz == 0
    assert solve_lp(back).value == solve_lp(lp).value


def test_highly_degenerate_transport_like_lp():
    # zero right-hand side except one row: every vertex is heavily degenerate
    rng = np.random.default_rng(5)
    n, m = 120, 40
    A = sp.random(m, n, density=0.15, random_state=rng, format="csr")
    A = A - sp.random(m, n, density=0.15, random_state=rng, format="csr")
    A = sp.vstack([A, sp.csr_matrix(np.ones((1, n)))]).tocsr()
    b = np.zeros(m + 1)
    b[-1] = 1.0
    c = rng.normal(size=n)
    ref = linprog(c, A_eq=A, b_eq=b, method="highs")
    sol = solve_lp(LinearProgram(c, A, b))
    assert ref.status == 0
    assert sol.status is LPStatus.OPTIMAL
    assert sol.value == pytest.approx(ref.fun, abs=1e-7 * (1 + abs(ref.fun)))
