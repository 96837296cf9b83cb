"""Sparse revised simplex for linear programs with nonnegative variables.

Equality rows ``A_eq x = b_eq`` and inequality rows ``A_ge x >= b_ge``.  Rows and
columns are equilibrated, phase 1 uses one artificial per row, the basis is held
as a sparse LU factorization updated by eta columns and refactored periodically.
Dantzig pricing is used while the objective moves; after a run of degenerate
pivots the solver switches to Bland's rule until the next strict improvement,
which rules out cycling.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)


class LPStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class NumericalFailure(RuntimeError):
    pass


def _csr(A, ncols):
    if A is None:
        return sp.csr_matrix((0, ncols))
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    return A


@dataclass
class LinearProgram:
    c: np.ndarray
    A_eq: sp.csr_matrix = None
    b_eq: np.ndarray = None
    A_ge: sp.csr_matrix = None
    b_ge: np.ndarray = None
    sense: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_eq = _csr(self.A_eq, n)
        self.A_ge = _csr(self.A_ge, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        self.b_ge = np.zeros(0) if self.b_ge is None else np.asarray(self.b_ge, float).ravel()
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        if self.A_eq.shape != (self.b_eq.size, n) or self.A_ge.shape != (self.b_ge.size, n):
            raise ValueError("constraint shapes do not match")

    @property
    def n_vars(self):
        return self.c.size

    def violation(self, x):
        v = 0.0
        if self.b_eq.size:
            v = max(v, float(np.abs(self.A_eq @ x - self.b_eq).max()))
        if self.b_ge.size:
            v = max(v, float(np.maximum(self.b_ge - self.A_ge @ x, 0.0).max()))
        if x.size:
            v = max(v, float(np.maximum(-x, 0.0).max()))
        return v

    def dump(self, path):
        """Plain-text form: header, vectors, then ``row col value`` triples."""
        with open(path, "w") as fh:
            fh.write(f"sense {self.sense}\n")
            fh.write(f"shape {self.n_vars} {self.b_eq.size} {self.b_ge.size}\n")
            for name, vec in (("c", self.c), ("b_eq", self.b_eq), ("b_ge", self.b_ge)):
                fh.write(name + "".join(f" {v:.17g}" for v in vec) + "\n")
            for name, A in (("A_eq", self.A_eq), ("A_ge", self.A_ge)):
                C = A.tocoo()
                order = np.lexsort((C.col, C.row))
                fh.write(f"{name} {C.nnz}\n")
                for r, k, v in zip(C.row[order], C.col[order], C.data[order]):
                    fh.write(f"{r} {k} {v:.17g}\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            lines = iter(fh.read().splitlines())
        sense = next(lines).split()[1]
        n, me, mg = (int(t) for t in next(lines).split()[1:])
        vecs = {}
        for _ in range(3):
            parts = next(lines).split()
            vecs[parts[0]] = np.array([float(t) for t in parts[1:]])
        mats = {}
        for name, m in (("A_eq", me), ("A_ge", mg)):
            head = next(lines).split()
            nnz = int(head[1])
            trip = np.array([[float(t) for t in next(lines).split()] for _ in range(nnz)]
                            ).reshape(-1, 3)
            mats[name] = sp.csr_matrix((trip[:, 2], (trip[:, 0].astype(int),
                                                     trip[:, 1].astype(int))), shape=(m, n))
        return cls(vecs["c"], mats["A_eq"], vecs["b_eq"], mats["A_ge"], vecs["b_ge"], sense)


@dataclass
class LPSolution:
    status: LPStatus
    x: np.ndarray
    value: float
    max_violation: float
    iterations: int
    basis: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    y_ge: np.ndarray | None = None
    duality_gap: float = float("nan")
    phase1_infeasibility: float = 0.0


class _Factor:
    """Basis factorization with product-form eta updates."""

    def __init__(self, A, basis, refactor_every):
        self.A = A
        self.basis = np.array(basis, dtype=np.int64)
        self.every = refactor_every
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis].tocsc()
        try:
            self.lu = splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise NumericalFailure(f"singular basis: {exc}") from exc
        self.etas = []

    def ftran(self, v):
        z = self.lu.solve(np.asarray(v, dtype=float))
        for r, alpha in self.etas:
            zr = z[r] / alpha[r]
            z -= alpha * zr
            z[r] = zr
        return z

    def btran(self, v):
        v = np.array(v, dtype=float)
        for r, alpha in reversed(self.etas):
            v[r] = (v[r] - (alpha @ v - alpha[r] * v[r])) / alpha[r]
        return self.lu.solve(v, trans="T")

    def replace(self, r, j, alpha):
        self.basis[r] = j
        self.etas.append((r, alpha))
        if len(self.etas) >= self.every:
            self.refactor()
            return True
        return False


class _Simplex:
    def __init__(self, A, b, n_struct, refactor_every, max_iter, ptol=1e-7, dtol=1e-9):
        self.A = A.tocsc()
        self.AT = A.T.tocsr()
        self.b = b
        self.bw = b
        self.M = A.shape[0]
        self.n_struct = n_struct
        self.is_art = np.arange(A.shape[1]) >= n_struct
        self.every = refactor_every
        self.max_iter = max_iter
        self.ptol = ptol
        self.dtol = dtol
        self.htol = 1e-10
        self.iterations = 0
        self.perturbed = False
        self.rng = np.random.default_rng(0)

    def start(self, basis):
        self.F = _Factor(self.A, basis, self.every)
        self.xB = self.F.ftran(self.b)

    def column(self, j):
        col = np.zeros(self.M)
        s, e = self.A.indptr[j], self.A.indptr[j + 1]
        col[self.A.indices[s:e]] = self.A.data[s:e]
        return col

    def reduced_costs(self, c, eligible):
        y = self.F.btran(c[self.F.basis])
        d = c - self.AT @ y
        d[self.F.basis] = 0.0
        d[~eligible] = 0.0
        return y, d

    def pivot(self, r, j, alpha, theta):
        self.xB -= theta * alpha
        self.xB[r] = theta
        if self.F.replace(r, j, alpha):
            self.xB = self.F.ftran(self.bw)

    def run(self, c, eligible, lock_artificials=False):
        """Iterate to optimality; returns ('optimal', None) or ('unbounded', j).

        With ``lock_artificials`` basic artificials must stay at zero.  Any
        perturbation is removed before returning.
        """
        try:
            return self._run(c, eligible, lock_artificials)
        finally:
            if self.bw is not self.b:
                self.unperturb()
                self.F.refactor()
                self.xB = self.F.ftran(self.b)

    def _run(self, c, eligible, lock_artificials):
        bland = False
        degenerate = 0
        w = np.ones(self.A.shape[1])  # devex reference weights
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalFailure("simplex iteration limit reached")
            _, d = self.reduced_costs(c, eligible)
            cand = d < -self.dtol
            if not cand.any():
                return "optimal", None
            if bland:
                j = int(np.flatnonzero(cand)[0])
            else:
                score = np.where(cand, d * d / w, 0.0)
                j = int(np.argmax(score))
            alpha = self.F.ftran(self.column(j))
            basic_art = self.is_art[self.F.basis]
            ptol = self.ptol  # absolute: the problem is equilibrated
            pos = alpha > ptol
            art = basic_art & (np.abs(alpha) > ptol) if lock_artificials \
                else np.zeros(self.M, dtype=bool)
            if not pos.any() and not art.any():
                return "unbounded", j
            if bland:
                ratios = np.full(self.M, np.inf)
                ratios[pos] = np.maximum(self.xB[pos], 0.0) / alpha[pos]
                ratios[art] = 0.0
                theta = float(ratios.min())
                ties = np.flatnonzero(ratios <= theta * (1 + 1e-9) + 1e-14)
                r = int(ties[np.argmin(self.F.basis[ties])])
            else:
                # Harris two-pass test: allow a tiny bound shift, then take the largest pivot
                bound = np.full(self.M, np.inf)
                bound[pos] = (np.maximum(self.xB[pos], 0.0) + self.htol) / alpha[pos]
                bound[art] = 0.0
                tmax = float(bound.min())
                ratios = np.full(self.M, np.inf)
                ratios[pos] = np.maximum(self.xB[pos], 0.0) / alpha[pos]
                ratios[art] = 0.0
                cand_r = np.flatnonzero(ratios <= tmax)
                r = int(cand_r[np.argmax(np.abs(alpha[cand_r]))])
                theta = float(ratios[r])
            e = np.zeros(self.M)
            e[r] = 1.0
            prow = self.AT @ self.F.btran(e)
            if abs(prow[j] - alpha[r]) > 1e-9 * (1.0 + abs(alpha[r])) and self.F.etas:
                # column and row disagree on the pivot: the updates have drifted
                self.F.refactor()
                self.xB = self.F.ftran(self.bw)
                continue
            if not bland:
                prow = prow / alpha[r]
                leaving = self.F.basis[r]
                w = np.maximum(w, prow * prow * w[j])
                w[leaving] = max(w[j] / (alpha[r] * alpha[r]), 1.0)
                if w.max() > 1e8:
                    w[:] = 1.0
            if self.xB[r] < 0.0:
                # the ratio test treated this basic as zero; shift the right-hand side to match
                self.bw = self.bw + self.column(self.F.basis[r]) * -self.xB[r]
                self.xB[r] = 0.0
            self.pivot(r, j, alpha, theta)
            self.iterations += 1
            if theta * -d[j] <= 1e-14:
                degenerate += 1
                if degenerate >= 25 and not self.perturbed:
                    self.perturb(skip_artificials=lock_artificials)
                    degenerate = 0
                elif degenerate >= 200:
                    bland = True
            else:
                degenerate = 0
                bland = False

    def perturb(self, skip_artificials=False):
        """Lift basic values by small random amounts to break a degenerate stall.

        ``unperturb`` restores the true right-hand side; the caller then refactors and
        runs a dual cleanup.
        """
        delta = self.rng.uniform(1e-9, 1e-8, self.M) * (1.0 + np.abs(self.xB))
        delta += np.maximum(-self.xB, 0.0)
        if skip_artificials:
            delta[self.is_art[self.F.basis]] = 0.0
        self.bw = self.bw + self.A[:, self.F.basis] @ delta
        self.xB = self.xB + delta
        self.perturbed = True

    def unperturb(self):
        self.bw = self.b
        self.perturbed = False

    def dual_cleanup(self, c, eligible, max_steps=None):
        """Dual simplex pivots removing small negative basics left by the Harris test."""
        for _ in range(max_steps or 2 * self.M + 200):
            r = int(np.argmin(self.xB))
            if self.xB[r] >= -1e-15:
                return True
            e = np.zeros(self.M)
            e[r] = 1.0
            row = self.AT @ self.F.btran(e)
            _, d = self.reduced_costs(c, eligible)
            mask = eligible.copy()
            mask[self.F.basis] = False
            cand = np.flatnonzero(mask & (row < -self.ptol))
            if cand.size == 0:
                return False
            # Harris pass on the dual side, then the largest pivot among the candidates
            d_c = np.maximum(d[cand], 0.0)
            tmax = float(((d_c + self.dtol) / -row[cand]).min())
            ok = d_c / -row[cand] <= tmax
            j = int(cand[ok][np.argmax(-row[cand][ok])])
            alpha = self.F.ftran(self.column(j))
            if abs(alpha[r] - row[j]) > 1e-9 * (1.0 + abs(row[j])) and self.F.etas:
                self.F.refactor()
                self.xB = self.F.ftran(self.bw)
                continue
            self.pivot(r, j, alpha, self.xB[r] / alpha[r])
            self.iterations += 1
        return False

    def drive_out_artificials(self):
        for r in range(self.M):
            if not self.is_art[self.F.basis[r]]:
                continue
            e = np.zeros(self.M)
            e[r] = 1.0
            row = self.AT @ self.F.btran(e)
            row[self.is_art] = 0.0
            row[self.F.basis] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-7:
                alpha = self.F.ftran(self.column(j))
                self.pivot(r, j, alpha, self.xB[r] / alpha[r])
                self.iterations += 1


def _equilibrate(A):
    """Row then column max-norm scaling factors."""
    A = sp.csr_matrix(A)
    absA = abs(A)
    rmax = np.asarray(absA.max(axis=1).todense()).ravel()
    rs = np.where(rmax > 0, 1.0 / np.where(rmax > 0, rmax, 1.0), 1.0)
    A1 = sp.diags(rs) @ A
    cmax = np.asarray(abs(A1).max(axis=0).todense()).ravel()
    cs = np.where(cmax > 0, 1.0 / np.where(cmax > 0, cmax, 1.0), 1.0)
    return rs, cs


def solve_lp(lp, tol=1e-8, basis=None, max_iter=None, refactor_every=50, max_restarts=3):
    """Solve ``lp`` and certify optimality by primal/dual feasibility and the duality gap."""
    n = lp.n_vars
    me, mg = lp.b_eq.size, lp.b_ge.size
    M = me + mg
    sign = 1.0 if lp.sense == "min" else -1.0
    A = sp.vstack([sp.hstack([lp.A_eq, sp.csr_matrix((me, mg))]),
                   sp.hstack([lp.A_ge, -sp.identity(mg, format="csr")])]).tocsr()
    b = np.concatenate([lp.b_eq, lp.b_ge])
    c = np.concatenate([sign * lp.c, np.zeros(mg)])
    N = n + mg

    if M == 0:
        if np.any(c < 0):
            return LPSolution(LPStatus.UNBOUNDED, np.zeros(n), -sign * np.inf, 0.0, 0)
        return LPSolution(LPStatus.OPTIMAL, np.zeros(n), 0.0, 0.0, 0,
                          np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0), 0.0)

    rs, cs = _equilibrate(A)
    flip = np.where(b < 0, -1.0, 1.0)
    rs = rs * flip
    As = (sp.diags(rs) @ A @ sp.diags(cs)).tocsr()
    bs = rs * b
    cs_obj = cs * c
    kappa = float(np.abs(cs_obj).max()) if np.any(cs_obj) else 1.0
    cs_obj = cs_obj / kappa
    A1 = sp.hstack([As, sp.identity(M, format="csr")]).tocsr()
    c2 = np.concatenate([cs_obj, np.zeros(M)])
    eligible2 = np.concatenate([np.ones(N, dtype=bool), np.zeros(M, dtype=bool)])
    if max_iter is None:
        max_iter = 50 * (M + N) + 1000
    S = _Simplex(A1, bs, N, refactor_every, max_iter)
    feas_tol = 1e-9 * max(1.0, float(np.abs(bs).max()))

    warm = False
    if basis is not None and len(basis) == M:
        try:
            S.start(basis)
            art_vals = S.xB[S.is_art[S.F.basis]]
            warm = S.xB.min() >= -feas_tol and (art_vals.size == 0 or
                                                np.abs(art_vals).max() <= feas_tol)
        except NumericalFailure:
            warm = False
    phase1 = 0.0
    if not warm:
        S.start(np.arange(N, N + M))
        c1 = np.concatenate([np.zeros(N), np.ones(M)])
        all_cols = np.ones(N + M, dtype=bool)
        for _ in range(max_restarts + 1):
            S.run(c1, all_cols)
            S.F.refactor()
            S.xB = S.F.ftran(bs)
            if S.xB.min() >= -feas_tol:
                break
            # negative basics from the Harris shifts hide a better phase 1 vertex
            S.dual_cleanup(c1, all_cols)
            S.F.refactor()
            S.xB = S.F.ftran(bs)
        phase1 = float(np.sum(np.maximum(S.xB[S.is_art[S.F.basis]], 0.0)))
        if phase1 > 1e-8 * max(1.0, float(np.abs(bs).max())):
            x = np.zeros(N + M)
            x[S.F.basis] = S.xB
            xo = cs[:n] * x[:n]
            return LPSolution(LPStatus.INFEASIBLE, xo, float(lp.c @ xo), lp.violation(xo),
                              S.iterations, S.F.basis.copy(), phase1_infeasibility=phase1)
        S.drive_out_artificials()

    for attempt in range(max_restarts + 1):
        status, j = S.run(c2, eligible2, lock_artificials=True)
        if status == "unbounded":
            return LPSolution(LPStatus.UNBOUNDED, np.zeros(n), -sign * np.inf, np.nan,
                              S.iterations, S.F.basis.copy())
        S.F.refactor()
        S.xB = S.F.ftran(bs)
        S.dual_cleanup(c2, eligible2)
        S.F.refactor()
        S.xB = S.F.ftran(bs)
        for _ in range(2):
            x = np.zeros(N + M)
            x[S.F.basis] = S.xB
            S.xB += S.F.ftran(bs - A1 @ x)
        x = np.zeros(N + M)
        x[S.F.basis] = S.xB
        y, d = S.reduced_costs(c2, eligible2)
        primal_ok = S.xB.min() >= -feas_tol and np.abs(A1 @ x - bs).max() <= feas_tol
        dual_ok = d.min() >= -S.dtol
        if primal_ok and dual_ok:
            break
        log.debug("certification failed (primal %s, dual %s); refactor and resume",
                  primal_ok, dual_ok)
        if not primal_ok:
            # restore feasibility from scratch with the current basis as a hint
            S.start(np.arange(N, N + M))
            S.run(np.concatenate([np.zeros(N), np.ones(M)]), np.ones(N + M, dtype=bool))
            S.drive_out_artificials()
    else:
        raise NumericalFailure("could not certify an optimal basis after restarts")

    x = np.maximum(x, 0.0)
    xo = cs[:n] * x[:n]
    value = float(lp.c @ xo)
    yo = kappa * rs * y * sign
    y_eq, y_ge = yo[:me], yo[me:]
    dual_value = float(lp.b_eq @ y_eq + lp.b_ge @ y_ge)
    gap = abs(value - dual_value)
    viol = lp.violation(xo)
    if viol > tol * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise NumericalFailure(f"constraint violation {viol:.3e} exceeds tolerance")
    return LPSolution(LPStatus.OPTIMAL, xo, value, viol, S.iterations, S.F.basis.copy(),
                      y_eq, y_ge, gap, phase1)
