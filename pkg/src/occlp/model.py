"""Problem specification, builtin models and symbolic validation."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .expr import Node, const, evaluate_on, parse_expression


class UnknownModel(KeyError):
    pass


class MissingParam(KeyError):
    pass


class UnsupportedCoupling(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


class Case(enum.Enum):
    MIN_QUEUEING = "min"
    MAX_HARVESTING = "max"


class Domain(enum.Enum):
    FULL_SPACE = "full"
    NONNEGATIVE_ORTHANT = "orthant"


def _matrix(rows, d, ncols, what):
    rows = tuple(tuple(parse_expression(e, d) for e in r) for r in rows)
    if len(rows) != d or any(len(r) != ncols for r in rows):
        raise InvalidSpec(f"{what} must be a {d} x {ncols} matrix")
    return rows


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    d: int
    case: Case
    drift: tuple
    diffusion: tuple
    control_dirs: tuple = ()
    intrinsic_dirs: tuple = ()
    running_cost: Node = field(default_factory=lambda: const(0.0))
    intrinsic_cost: tuple = ()
    control_cost: tuple = ()
    lyapunov_exponent: float = 2.0
    k1: float = 1.0
    k2: float = 1.0
    gamma_lower_bound: float | None = None
    domain: Domain = Domain.FULL_SPACE
    lo: tuple = ()
    hi: tuple = ()
    d2: int = 0
    d3: int = 0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.d
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("case", Case(self.case))
        set_("domain", Domain(self.domain))
        drift = tuple(parse_expression(e, d) for e in self.drift)
        if len(drift) != d:
            raise InvalidSpec(f"drift must have {d} components")
        set_("drift", drift)
        diff = tuple(tuple(r) for r in self.diffusion)
        d1 = len(diff[0]) if diff else 0
        set_("diffusion", _matrix(diff, d, d1, "diffusion"))
        d3 = len(self.control_dirs[0]) if self.control_dirs else self.d3
        d2 = len(self.intrinsic_dirs[0]) if self.intrinsic_dirs else self.d2
        set_("d3", d3)
        set_("d2", d2)
        set_("control_dirs", _matrix(self.control_dirs or [()] * d, d, d3, "control_dirs")
             if d3 else tuple(() for _ in range(d)))
        set_("intrinsic_dirs", _matrix(self.intrinsic_dirs or [()] * d, d, d2, "intrinsic_dirs")
             if d2 else tuple(() for _ in range(d)))
        set_("running_cost", parse_expression(self.running_cost, d))
        f = tuple(parse_expression(e, d) for e in self.intrinsic_cost)
        g = tuple(parse_expression(e, d) for e in self.control_cost)
        if len(f) != d2 or len(g) != d3:
            raise InvalidSpec("cost vectors must match the number of directions")
        set_("intrinsic_cost", f)
        set_("control_cost", g)
        for what, group in (("drift", drift), ("diffusion", self.diffusion),
                            ("control_dirs", self.control_dirs),
                            ("intrinsic_dirs", self.intrinsic_dirs)):
            flat = [e for row in group for e in (row if isinstance(row, tuple) else (row,))]
            for e in flat:
                if isinstance(e, Node) and e.uses_moments():
                    raise UnsupportedCoupling(
                        f"{what} may not depend on mean-field moments; only costs may")
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != d or len(hi) != d:
            raise InvalidSpec("box bounds must have d entries")
        if any(not h > l for l, h in zip(lo, hi)):
            raise InvalidSpec("truncation box must have positive volume")
        if self.domain is Domain.NONNEGATIVE_ORTHANT and min(lo) < 0:
            raise InvalidSpec("orthant domain needs lo >= 0")
        if self.d2 > d:
            raise InvalidSpec("at most d intrinsic directions (one per face x_j = 0)")
        set_("lo", lo)
        set_("hi", hi)
        if self.k2 <= 0 or self.k1 < 0:
            raise InvalidSpec("Lyapunov constants need k1 >= 0 and k2 > 0")

    # ----------------------------------------------------------- evaluation

    @property
    def d1(self):
        return len(self.diffusion[0]) if self.diffusion else 0

    @property
    def box(self):
        return np.array([self.lo, self.hi]).T

    def uses_moments(self):
        nodes = [self.running_cost, *self.intrinsic_cost, *self.control_cost]
        return any(n.uses_moments() for n in nodes)

    def drift_values(self, X):
        X = np.atleast_2d(X)
        return np.stack([evaluate_on(e, X) for e in self.drift], axis=-1)

    def diffusion_values(self, X):
        X = np.atleast_2d(X)
        return np.array([[evaluate_on(e, X) for e in row] for row in self.diffusion]
                        ).transpose(2, 0, 1).reshape(X.shape[0], self.d, self.d1)

    def a_values(self, X):
        s = self.diffusion_values(X)
        return np.einsum("nik,njk->nij", s, s)

    def gamma_values(self, X):
        X = np.atleast_2d(X)
        if self.d3 == 0:
            return np.zeros((X.shape[0], self.d, 0))
        return np.array([[evaluate_on(e, X) for e in row] for row in self.control_dirs]
                        ).transpose(2, 0, 1)

    def phi_values(self, X):
        X = np.atleast_2d(X)
        if self.d2 == 0:
            return np.zeros((X.shape[0], self.d, 0))
        return np.array([[evaluate_on(e, X) for e in row] for row in self.intrinsic_dirs]
                        ).transpose(2, 0, 1)

    def running_cost_values(self, X, m=None):
        return evaluate_on(self.running_cost, np.atleast_2d(X), m)

    def control_cost_values(self, X, m=None):
        X = np.atleast_2d(X)
        return np.stack([evaluate_on(e, X, m) for e in self.control_cost], axis=-1) \
            if self.d3 else np.zeros((X.shape[0], 0))

    def intrinsic_cost_values(self, X, m=None):
        X = np.atleast_2d(X)
        return np.stack([evaluate_on(e, X, m) for e in self.intrinsic_cost], axis=-1) \
            if self.d2 else np.zeros((X.shape[0], 0))

    def lyapunov(self, X):
        """V(x) = sum_i |x_i|^K."""
        return np.sum(np.abs(np.atleast_2d(X)) ** self.lyapunov_exponent, axis=-1)

    def generator_of_lyapunov(self, X):
        """Closed form of the diffusion generator applied to V."""
        X = np.atleast_2d(X)
        K = self.lyapunov_exponent
        ax = np.abs(X)
        a = self.a_values(X)
        diag = np.einsum("nii->ni", a)
        beta = self.drift_values(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            second = ax ** (K - 2)
        first = np.sign(X) * ax ** (K - 1)
        return np.sum(0.5 * diag * K * (K - 1) * second + beta * K * first, axis=-1)

    def with_costs(self, running_cost=None, intrinsic_cost=None, control_cost=None):
        return replace(
            self,
            running_cost=self.running_cost if running_cost is None else running_cost,
            intrinsic_cost=self.intrinsic_cost if intrinsic_cost is None else tuple(intrinsic_cost),
            control_cost=self.control_cost if control_cost is None else tuple(control_cost),
        )

    def with_box(self, lo, hi):
        return replace(self, lo=tuple(lo), hi=tuple(hi))


# ------------------------------------------------------------------ builtins

_ALIASES = {"θ": "theta", "σ": "sigma", "σ0": "sigma0", "α": "alpha", "β": "beta",
            "γ": "gamma", "γ̄": "gamma_bar"}


def _norm_params(params):
    return {_ALIASES.get(k, k): v for k, v in (params or {}).items()}


def _need(p, model, *keys):
    for k in keys:
        if k not in p:
            raise MissingParam(f"model {model!r} requires parameter {k!r}")


def _num(v):
    return repr(float(v))


def _vec(v, d):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return np.repeat(v, d) if v.size == 1 else v


def _builtin_ou(p):
    _need(p, "ou", "theta", "sigma")
    d = int(p.get("d", 1))
    th, s = float(p["theta"]), float(p["sigma"])
    L = float(p.get("L", 5.0))
    return ProblemSpec(
        d=d, case=Case.MIN_QUEUEING,
        drift=[f"-{_num(th)}*x{i + 1}" for i in range(d)],
        diffusion=[[_num(s) if i == j else "0" for j in range(d)] for i in range(d)],
        running_cost=p.get("ell", "+".join(f"x{i + 1}^2" for i in range(d))),
        lyapunov_exponent=2.0, k1=p.get("k1", d * s * s), k2=p.get("k2", th),
        domain=Domain.FULL_SPACE, lo=p.get("lo", [-L] * d), hi=p.get("hi", [L] * d),
        name="ou")


def _builtin_reflected_ou(p):
    _need(p, "reflected_ou", "theta", "sigma")
    th, s = float(p["theta"]), float(p["sigma"])
    return ProblemSpec(
        d=1, case=Case.MIN_QUEUEING,
        drift=[f"-{_num(th)}*x1"], diffusion=[[_num(s)]],
        control_dirs=[["1"]], intrinsic_dirs=[["1"]],
        running_cost=p.get("ell", "x1"),
        intrinsic_cost=[_num(p.get("f", 0.0))], control_cost=[_num(p.get("g", 1.0))],
        lyapunov_exponent=2.0, k1=p.get("k1", s * s), k2=p.get("k2", th),
        domain=Domain.NONNEGATIVE_ORTHANT, lo=[0.0], hi=[float(p.get("hi", 5.0))],
        name="reflected_ou")


def _builtin_rbm(p):
    _need(p, "rbm", "b", "sigma")
    b = np.atleast_1d(np.asarray(p["b"], dtype=float))
    d = b.size
    s = _vec(p["sigma"], d)
    R = np.asarray(p.get("R", np.eye(d)), dtype=float)
    hi = _vec(p.get("hi", 5.0), d)
    g = _vec(p.get("g", 1.0), d)
    return ProblemSpec(
        d=d, case=Case.MIN_QUEUEING,
        drift=[_num(v) for v in b],
        diffusion=[[_num(s[i]) if i == j else "0" for j in range(d)] for i in range(d)],
        control_dirs=[["1" if i == j else "0" for j in range(d)] for i in range(d)],
        intrinsic_dirs=[[_num(R[i, j]) for j in range(d)] for i in range(d)],
        running_cost=p.get("ell", "+".join(f"x{i + 1}" for i in range(d))),
        intrinsic_cost=[_num(v) for v in _vec(p.get("f", 0.0), d)],
        control_cost=[_num(v) for v in g],
        lyapunov_exponent=2.0, k1=p.get("k1", float(np.sum(s ** 2) + np.sum(hi ** 2))),
        k2=p.get("k2", 1.0),
        domain=Domain.NONNEGATIVE_ORTHANT, lo=[0.0] * d, hi=list(hi), name="rbm")


def _builtin_lv(p):
    _need(p, "lotka_volterra_harvest", "alpha", "beta", "sigma")
    alpha = np.atleast_1d(np.asarray(p["alpha"], dtype=float))
    d = alpha.size
    beta = np.asarray(p["beta"], dtype=float).reshape(d, d)
    s = _vec(p["sigma"], d)
    cross = float(p.get("gamma_cross", 0.1))
    gam = np.where(np.eye(d, dtype=bool), 1.0, cross) if "gamma" not in p \
        else np.asarray(p["gamma"], dtype=float).reshape(d, -1)
    d3 = gam.shape[1]
    drift = []
    for i in range(d):
        comp = "+".join(f"{_num(beta[j, i])}*x{j + 1}" for j in range(d))
        drift.append(f"x{i + 1}*({_num(alpha[i])}-({comp}))")
    hi = _vec(p.get("hi", 3.0), d)
    return ProblemSpec(
        d=d, case=Case.MAX_HARVESTING, drift=drift,
        diffusion=[[f"{_num(s[i])}*x{i + 1}" if i == j else "0" for j in range(d)]
                   for i in range(d)],
        control_dirs=[[_num(gam[i, j]) for j in range(d3)] for i in range(d)],
        running_cost=p.get("ell", "0"),
        control_cost=[_num(v) for v in _vec(p.get("g", 1.0), d3)],
        lyapunov_exponent=float(p.get("K", 8.0)), k1=p.get("k1", 3.0 * d), k2=p.get("k2", 1.0),
        gamma_lower_bound=float(p.get("gamma_bar", gam.min())),
        domain=Domain.NONNEGATIVE_ORTHANT, lo=[0.0] * d, hi=list(hi),
        name="lotka_volterra_harvest")


def _builtin_logistic(p):
    _need(p, "logistic_harvest", "sigma0")
    s0 = float(p["sigma0"])
    return ProblemSpec(
        d=1, case=Case.MAX_HARVESTING,
        drift=["x1*(1-x1)"], diffusion=[[f"{_num(s0)}*x1"]],
        control_dirs=[["1"]], running_cost=p.get("ell", "0"),
        control_cost=[str(p.get("g", "1"))],
        lyapunov_exponent=float(p.get("K", 8.0)), k1=p.get("k1", 3.0), k2=p.get("k2", 1.0),
        gamma_lower_bound=float(p.get("gamma_bar", 1.0)),
        domain=Domain.NONNEGATIVE_ORTHANT, lo=[0.0], hi=[float(p.get("hi", 2.0))],
        name="logistic_harvest")


BUILTINS = {
    "ou": _builtin_ou,
    "reflected_ou": _builtin_reflected_ou,
    "rbm": _builtin_rbm,
    "lotka_volterra_harvest": _builtin_lv,
    "logistic_harvest": _builtin_logistic,
}


def builtin_model(name, params=None):
    """Construct one of the builtin examples from its coefficients."""
    if name not in BUILTINS:
        raise UnknownModel(f"unknown model {name!r}; choose from {sorted(BUILTINS)}")
    p = _norm_params(params)
    return replace(BUILTINS[name](p), params=p)


# ---------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    passed: bool
    worst_value: float = float("nan")
    worst_node: int | None = None
    worst_x: tuple | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list
    tail_bound: float = float("nan")
    structural_ok: bool = True

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self):
        return {
            "passed": self.passed,
            "structural_ok": self.structural_ok,
            "tail_bound": self.tail_bound,
            "checks": [
                {"name": c.name, "passed": c.passed, "worst_value": c.worst_value,
                 "worst_node": c.worst_node,
                 "worst_x": None if c.worst_x is None else list(c.worst_x),
                 "detail": c.detail}
                for c in self.checks
            ],
        }


def _worst(name, values, X, ok_if_ge=0.0, detail=""):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return Check(name, True, detail=detail + " (nothing to check)")
    k = int(np.argmin(values))
    return Check(name, bool(values[k] >= ok_if_ge), float(values[k]), k,
                 tuple(float(v) for v in X[k]), detail)


def structural_problems(spec):
    out = []
    if spec.case is Case.MAX_HARVESTING:
        if spec.d2 != 0:
            out.append("harvesting problems admit no intrinsic boundary directions")
        if spec.domain is not Domain.NONNEGATIVE_ORTHANT:
            out.append("harvesting problems live on the nonnegative orthant")
    return out


def tail_estimate(spec, grid):
    """Bound on the mass outside the box implied by the Lyapunov moment bound."""
    X = grid.points()
    idx = grid.multi_index()
    shape = np.array(grid.shape)
    outer = idx == shape - 1
    if spec.domain is Domain.FULL_SPACE:
        outer = outer | (idx == 0)
    else:
        outer = outer | ((idx == 0) & (grid.lo > 0))
    V = spec.lyapunov(X[outer.any(axis=1)])
    vmin = float(V.min()) if V.size else np.inf
    return (spec.k1 / spec.k2) / vmin if vmin > 0 else np.inf


def validate_spec(spec, grid, moments=None, generator=None):
    """Check sign conditions and the Lyapunov inequality; never raises on violations."""
    X = grid.points()
    m = None
    if spec.uses_moments():
        m = np.zeros(spec.d) if moments is None else np.asarray(moments, dtype=float)
    checks = []
    problems = structural_problems(spec)
    checks.append(Check("structure", not problems, detail="; ".join(problems)))
    if spec.d2:
        checks.append(_worst("intrinsic_cost_nonnegative",
                             spec.intrinsic_cost_values(X, m).min(axis=1), X))
    if spec.d3:
        checks.append(_worst("control_cost_nonnegative",
                             spec.control_cost_values(X, m).min(axis=1), X))
    if spec.case is Case.MAX_HARVESTING and spec.d3:
        gb = spec.gamma_lower_bound
        if gb is None or gb <= 0:
            checks.append(Check("gamma_lower_bound", False,
                                detail="a positive lower bound on control directions is required"))
        else:
            gmin = spec.gamma_values(X).reshape(X.shape[0], -1).min(axis=1)
            checks.append(_worst("gamma_lower_bound", gmin - gb, X,
                                 detail=f"every entry of gamma must be >= {gb}"))
    interior = ~grid.boundary_mask()
    Xi = X[interior] if interior.any() else X
    slack = spec.k1 - spec.k2 * spec.lyapunov(Xi) - spec.generator_of_lyapunov(Xi)
    tol = -1e-9 * (1.0 + spec.k1 + spec.k2 * float(spec.lyapunov(X).max()))
    checks.append(_worst("lyapunov_symbolic", slack, Xi, ok_if_ge=tol,
                         detail=f"A V <= k1 - k2 V with K = {spec.lyapunov_exponent}"))
    if generator is not None:
        V = spec.lyapunov(X)
        QV = generator.stationarity_operator() @ V
        checks.append(_worst("lyapunov_discrete", spec.k1 - spec.k2 * V - QV, X,
                             ok_if_ge=tol, detail="discrete generator applied to V on the grid"))
    if spec.case is Case.MAX_HARVESTING:
        beta = spec.drift_values(X)
        far = np.isclose(X, grid.hi)
        vals = np.where(far, -beta, np.inf).min(axis=1)
        checks.append(_worst("drift_inward_at_far_faces", vals[np.isfinite(vals)],
                             X[np.isfinite(vals)],
                             detail="drift must point back into the box on x_i = hi_i"))
    return ValidationReport(checks, tail_estimate(spec, grid), not problems)


def suggest_lyapunov_constants(spec, grid, k2=1.0, generator=None, margin=1.05):
    """Smallest k1 (times ``margin``) making the symbolic, and optionally discrete, check pass."""
    X = grid.points()
    V = spec.lyapunov(X)
    k1 = float(np.max(spec.generator_of_lyapunov(X) + k2 * V))
    if generator is not None:
        k1 = max(k1, float(np.max(generator.stationarity_operator() @ V + k2 * V)))
    return max(k1, 0.0) * margin, k2
