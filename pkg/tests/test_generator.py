import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from occlp.generator import (ARTIFICIAL, GENUINE, INTERIOR, NoGenuineBoundary, assemble,
                             assemble_B, assemble_Q, assemble_R, classify_boundary, dump_coo,
                             load_coo)
from occlp.grid import ControlGrid, make_control_grid, make_uniform_grid
from occlp.model import ProblemSpec, builtin_model


def spec1(drift, sigma, **kw):
    kw.setdefault("lo", [0.0])
    kw.setdefault("hi", [4.0])
    return ProblemSpec(d=1, case="min", drift=[drift], diffusion=[[sigma]], **kw)


def row(M, i):
    r = M.getrow(i).toarray().ravel()
    return {int(j): float(r[j]) for j in np.nonzero(r)[0]}


def test_upwind_drift_row():
    Q = assemble_Q(spec1("1", "0"), make_uniform_grid([0, 4], 9))[0]
    assert row(Q, 3) == {3: -2.0, 4: 2.0}


def test_central_diffusion_row():
    Q = assemble_Q(spec1("0", repr(2 ** 0.5)), make_uniform_grid([0, 4], 5))[0]
    r = row(Q, 2)
    assert r[1] == pytest.approx(1.0, rel=1e-15)
    assert r[2] == pytest.approx(-2.0, rel=1e-15)
    assert r[3] == pytest.approx(1.0, rel=1e-15)


def test_ou_drift_uses_backward_difference_at_positive_x():
    spec = builtin_model("ou", {"theta": 1, "sigma": 0.0001})
    g = make_uniform_grid([-5, 5], 11)
    Q = assemble_Q(spec, g)[0]
    k = int(np.argmin(np.abs(g.axes[0] - 2.0)))
    r = row(Q, k)
    # beta(2) = -2, spacing 1: backward rate 2 plus the tiny diffusion part
    assert r[k - 1] == pytest.approx(2.0 + 0.5e-8, rel=1e-12)
    assert r[k + 1] == pytest.approx(0.5e-8, rel=1e-6)


def test_artificial_boundary_rows_conserve():
    g = make_uniform_grid([0, 4], 9)
    Q = assemble_Q(spec1("1", "1"), g)[0]
    assert np.abs(Q @ np.ones(g.n)).max() == 0.0
    assert row(Q, 8)[8] == pytest.approx(-row(Q, 8)[7])


def test_one_step_jump_row():
    g = make_uniform_grid([0, 1], 2)
    spec = spec1("0", "1", control_dirs=[["1"]], control_cost=["1"], hi=[1.0])
    B = assemble_B(spec, g, ControlGrid([[1.0]]))[0]
    k = np.flatnonzero((B.node == 1) & (B.jump == 1))[0]
    assert row(B.matrix, k) == {0: 1.0, 1: -1.0}


def test_reflection_rows_of_reflected_ou():
    spec = builtin_model("reflected_ou", {"theta": 1, "sigma": 2 ** 0.5})
    g = make_uniform_grid([0, 5], 201)
    R = assemble_R(spec, g)
    assert len(R) == 1 and R[0].rows == 1
    assert R[0].node.tolist() == [0]
    x = g.axes[0]
    assert R[0].matrix @ x == pytest.approx([1.0], rel=1e-12)
    assert np.abs(R[0].matrix @ np.ones(g.n)).max() == 0.0


def test_no_genuine_boundary():
    spec = builtin_model("reflected_ou", {"theta": 1, "sigma": 1})
    with pytest.raises(NoGenuineBoundary):
        assemble_R(spec, make_uniform_grid([0.5, 5], 11))


def test_boundary_classification():
    spec = builtin_model("reflected_ou", {"theta": 1, "sigma": 1})
    codes = classify_boundary(spec, make_uniform_grid([0, 5], 6))
    assert codes.tolist() == [GENUINE] + [INTERIOR] * 4 + [ARTIFICIAL]


def test_genuine_outflow_goes_to_leak():
    spec = builtin_model("reflected_ou", {"theta": 1, "sigma": 2 ** 0.5})
    gen = assemble(spec, make_uniform_grid([0, 5], 11), make_control_grid(1, jumps=[0.5]))
    assert gen.leak[0] > 0 and np.all(gen.leak[1:] == 0)
    S = gen.stationarity_operator()
    assert (S @ np.ones(gen.n))[0] == pytest.approx(-gen.leak[0])


def _random_spec(d, data):
    lo = [0.0] * d
    hi = [3.0] * d
    drift = [data.draw(st.sampled_from(["1-x{k}", "-x{k}", "x{k}*(1-x{k})", "0.5", "-2"]))
             .format(k=k + 1) for k in range(d)]
    diag = [data.draw(st.sampled_from(["1", "0.3*x{k}", "0", "0.5+0.1*x{k}"])).format(k=k + 1)
            for k in range(d)]
    diff = [[diag[i] if i == j else ("0.2" if data.draw(st.booleans()) else "0")
             for j in range(d)] for i in range(d)]
    gam = [[data.draw(st.sampled_from(["1", "0.5", "0", "1+0.2*x1"])) for _ in range(2)]
           for _ in range(d)]
    return ProblemSpec(d=d, case="max", drift=drift, diffusion=diff, control_dirs=gam,
                       control_cost=["1", "1"], gamma_lower_bound=0.1, domain="orthant",
                       lo=lo, hi=hi, lyapunov_exponent=4)


@given(st.integers(1, 2), st.data())
@settings(max_examples=40, deadline=None)
def test_generator_invariants(d, data):
    spec = _random_spec(d, data)
    counts = data.draw(st.lists(st.integers(3, 7), min_size=d, max_size=d))
    g = make_uniform_grid([[0.0, 3.0]] * d, counts)
    cg = make_control_grid(2, jumps=[0.25, 0.7, 5.0])
    with _nowarn():
        gen = assemble(spec, g, cg)
    Q = gen.Q.tocoo()
    assert np.abs(gen.Q @ np.ones(g.n)).max() <= 1e-12 * max(1.0, abs(Q.data).max(initial=0.0))
    assert Q.data[Q.row != Q.col].min(initial=0.0) >= 0.0
    X = g.points()
    a = np.array([0.7, -1.3][:d])
    h = X @ a + 2.0
    gam = spec.gamma_values(X)
    for i, blk in enumerate(gen.B):
        assert np.abs(blk.matrix @ np.ones(g.n)).max(initial=0.0) <= 1e-12
        # affine exactness: (h(x - gamma y) - h(x)) / y = -gamma . a
        expected = -(gam[blk.node, :, i] @ a)
        assert np.allclose(blk.matrix @ h, expected, atol=1e-10, rtol=0)


class _nowarn:
    def __enter__(self):
        import warnings
        self._c = warnings.catch_warnings()
        self._c.__enter__()
        warnings.simplefilter("ignore")

    def __exit__(self, *exc):
        return self._c.__exit__(*exc)


def test_affine_jump_rows_give_minus_gamma():
    spec = builtin_model("logistic_harvest", {"sigma0": 0.2})
    g = make_uniform_grid([0, 2], 41)
    B = assemble_B(spec, g, make_control_grid(1, g))[0]
    x = g.axes[0]
    assert np.allclose(B.matrix @ x, -1.0, rtol=0, atol=1e-12)
    inf_rows = B.jump == 0
    assert inf_rows.any()
    assert np.allclose((B.matrix @ x)[inf_rows], -1.0, rtol=0, atol=1e-12)
    # no finite row from the x = 0 node, nothing to harvest there
    assert 0 not in B.node.tolist()


def test_jump_dropped_and_recorded():
    spec = builtin_model("logistic_harvest", {"sigma0": 0.2})
    g = make_uniform_grid([0, 2], 5)
    B = assemble_B(spec, g, ControlGrid([[0.5, 1.0, 2.0, 4.0]]))[0]
    assert any(v == 0 for v, _, _ in B.dropped)
    # from x = 1 the jumps 1, 2 and 4 all truncate to 1; only the first is kept
    k1 = (B.node == 2)
    assert np.sort(B.size[k1]).tolist() == [0.0, 0.5, 1.0]


def test_mesh_refinement_first_order():
    spec = builtin_model("ou", {"theta": 1, "sigma": 1})
    errs = []
    for n in (201, 401, 801):
        g = make_uniform_grid([-5, 5], n)
        x = g.axes[0]
        Q = assemble_Q(spec, g)[0]
        exact = -0.5 * np.sin(x) - x * np.cos(x)
        errs.append(np.abs(Q @ np.sin(x) - exact)[1:-1].max())
    for e0, e1 in zip(errs, errs[1:]):
        assert 2.0 * 0.8 <= e0 / e1 <= 2.0 * 1.2


def test_cross_diffusion_and_fallback(caplog):
    spec = ProblemSpec(d=2, case="min", drift=["-x1", "-x2"],
                       diffusion=[["1", "0"], ["0.3", "1"]], lo=[-2, -2], hi=[2, 2])
    g = make_uniform_grid([[-2, 2], [-2, 2]], 9)
    Q = assemble_Q(spec, g)[0]
    X = g.points()
    # a12 = 0.3: the cross term reproduces h = x1 x2 exactly away from the drift
    h = X[:, 0] * X[:, 1]
    exact = 0.3 + (-X[:, 0]) * X[:, 1] + X[:, 0] * (-X[:, 1])
    interior = ~g.boundary_mask()
    assert np.abs((Q @ h - exact)[interior]).max() < 1.0  # upwind drift error O(h)
    C = Q.tocoo()
    assert C.data[C.row != C.col].min() >= 0
    strong = ProblemSpec(d=2, case="min", drift=["0", "0"],
                         diffusion=[["1", "0"], ["5", "1"]], lo=[-2, -2], hi=[2, 2])
    Qs, *_, fb = assemble_Q(strong, make_uniform_grid([[-2, 2], [-2, 2]], [9, 3]))
    assert "diagonal diffusion" in caplog.text
    assert len(fb) > 0
    assert (Qs.tocoo().data[Qs.tocoo().row != Qs.tocoo().col]).min() >= 0


def test_invariant_face_isolation():
    spec = builtin_model("logistic_harvest", {"sigma0": 0.2})
    g = make_uniform_grid([0, 2], 21)
    gen = assemble(spec, g, make_control_grid(1, g))
    assert gen.invariant_axes == (0,)
    assert gen.Q[1, 0] == 0.0
    assert row(gen.Q, 0) == {}


def test_coo_dump_round_trip(tmp_path):
    spec = builtin_model("logistic_harvest", {"sigma0": 0.2})
    g = make_uniform_grid([0, 2], 21)
    gen = assemble(spec, g, make_control_grid(1, g))
    p = tmp_path / "Q.txt"
    dump_coo(gen.B[0].matrix, p)
    back = load_coo(p)
    assert (back != gen.B[0].matrix).nnz == 0
    text = p.read_text()
    dump_coo(gen.B[0].matrix, p)
    assert p.read_text() == text


def test_assembly_is_deterministic():
    spec = builtin_model("lotka_volterra_harvest",
                         {"alpha": [1, 1], "beta": [[1, .2], [.3, 1]], "sigma": [.1, .1]})
    g = make_uniform_grid([[0, 3], [0, 3]], 7)
    cg = make_control_grid(2, g)
    a = assemble(spec, g, cg)
    b = assemble(spec, g, cg)
    assert (a.Q != b.Q).nnz == 0
    assert all((x.matrix != y.matrix).nnz == 0 for x, y in zip(a.B, b.B))
