"""Finite-difference discretization of the diffusion, jump and reflection operators."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import interpolation_matrix
from .model import Case, Domain

log = logging.getLogger(__name__)

INTERIOR, GENUINE, ARTIFICIAL = 0, 1, 2


class NonMonotoneScheme(ValueError):
    pass


class NoGenuineBoundary(ValueError):
    pass


@dataclass
class JumpBlock:
    """Rows of one control direction: node, jump-grid entry and effective size."""

    matrix: sp.csr_matrix
    node: np.ndarray
    jump: np.ndarray
    size: np.ndarray
    nominal: np.ndarray
    dropped: list = field(default_factory=list)

    @property
    def rows(self):
        return self.matrix.shape[0]


@dataclass
class ReflectionBlock:
    matrix: sp.csr_matrix
    node: np.ndarray

    @property
    def rows(self):
        return self.matrix.shape[0]


@dataclass
class DiscreteGenerator:
    Q: sp.csr_matrix
    leak: np.ndarray
    B: list
    R: list
    boundary: np.ndarray
    genuine_axes: tuple = ()
    invariant_axes: tuple = ()
    fallback_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n(self):
        return self.Q.shape[0]

    def stationarity_operator(self):
        """Q with the outflow through genuine boundary faces removed from the diagonal."""
        if not np.any(self.leak):
            return self.Q
        return (self.Q - sp.diags(self.leak)).tocsr()


def _spacings(grid):
    """Backward and forward spacings per axis, mirrored at the ends."""
    out = []
    for a in grid.axes:
        h = np.diff(a)
        hm = np.concatenate([[h[0]], h])
        hp = np.concatenate([h, [h[-1]]])
        out.append((hm, hp))
    return out


def genuine_axes(spec, grid):
    if spec.case is not Case.MIN_QUEUEING or spec.domain is not Domain.NONNEGATIVE_ORTHANT:
        return ()
    return tuple(k for k in range(min(spec.d2, spec.d)) if grid.lo[k] == 0.0)


def invariant_axes(spec, grid, X=None, beta=None, sigma=None, tol=1e-14):
    """Axes whose face x_k = 0 is left invariant by the uncontrolled dynamics."""
    if spec.case is not Case.MAX_HARVESTING or spec.domain is not Domain.NONNEGATIVE_ORTHANT:
        return ()
    X = grid.points() if X is None else X
    beta = spec.drift_values(X) if beta is None else beta
    sigma = spec.diffusion_values(X) if sigma is None else sigma
    out = []
    for k in range(spec.d):
        if grid.lo[k] != 0.0:
            continue
        face = X[:, k] == 0.0
        if np.all(np.abs(beta[face, k]) <= tol) and np.all(np.abs(sigma[face, k, :]) <= tol):
            out.append(k)
    return tuple(out)


def classify_boundary(spec, grid):
    idx = grid.multi_index()
    shape = np.array(grid.shape)
    on_face = (idx == 0) | (idx == shape - 1)
    codes = np.full(grid.n, INTERIOR, dtype=np.int8)
    codes[on_face.any(axis=1)] = ARTIFICIAL
    for k in genuine_axes(spec, grid):
        codes[idx[:, k] == 0] = GENUINE
    return codes


def assemble_Q(spec, grid, isolate_invariant_faces=True):
    """Monotone generator matrix, conservative on every row, plus genuine-face outflow."""
    X = grid.points()
    idx = grid.multi_index()
    shape = np.array(grid.shape)
    n, d = grid.n, grid.d
    beta = spec.drift_values(X)
    sig = spec.diffusion_values(X)
    a = np.einsum("nik,njk->nij", sig, sig)
    hs = _spacings(grid)
    hm = np.stack([hs[k][0][idx[:, k]] for k in range(d)], axis=1)
    hp = np.stack([hs[k][1][idx[:, k]] for k in range(d)], axis=1)

    axis_plus = np.empty((n, d))
    axis_minus = np.empty((n, d))
    for k in range(d):
        tot = hm[:, k] + hp[:, k]
        axis_plus[:, k] = a[:, k, k] / (hp[:, k] * tot)
        axis_minus[:, k] = a[:, k, k] / (hm[:, k] * tot)

    cross = {}
    cross_plus = axis_plus.copy()
    cross_minus = axis_minus.copy()
    for i in range(d):
        for j in range(i + 1, d):
            c = a[:, i, j]
            if not np.any(c):
                continue
            di = 0.5 * (hm[:, i] + hp[:, i])
            dj = 0.5 * (hm[:, j] + hp[:, j])
            w = np.abs(c) / (2.0 * di * dj)
            cross[(i, j)] = (c, w)
            for k in (i, j):
                cross_plus[:, k] -= w
                cross_minus[:, k] -= w
    ok = np.all(cross_plus >= -1e-12 * np.abs(axis_plus).max(initial=1.0), axis=1) & \
        np.all(cross_minus >= -1e-12 * np.abs(axis_minus).max(initial=1.0), axis=1)
    fallback = np.nonzero(~ok)[0] if cross else np.zeros(0, dtype=np.int64)
    if cross:
        if fallback.size:
            log.warning("cross-diffusion splitting is not positive at %d nodes; "
                        "using diagonal diffusion there", fallback.size)
        axis_plus = np.where(ok[:, None], np.maximum(cross_plus, 0.0), axis_plus)
        axis_minus = np.where(ok[:, None], np.maximum(cross_minus, 0.0), axis_minus)

    axis_plus += np.maximum(beta, 0.0) / hp
    axis_minus += np.maximum(-beta, 0.0) / hm

    offsets = []
    for k in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[k] = 1
        offsets.append((-e, axis_minus[:, k]))
        offsets.append((e, axis_plus[:, k]))
    for (i, j), (c, w) in cross.items():
        w = np.where(ok, w, 0.0)
        pp = np.zeros(d, dtype=np.int64)
        pp[i] = pp[j] = 1
        pm = pp.copy()
        pm[j] = -1
        pos = np.where(c > 0, w, 0.0)
        neg = np.where(c < 0, w, 0.0)
        offsets += [(pp, pos), (-pp, pos), (pm, neg), (-pm, neg)]

    if any(np.any(r < 0) or not np.all(np.isfinite(r)) for _, r in offsets):
        raise NonMonotoneScheme("negative or non-finite transition rate in the generator")

    gen_axes = genuine_axes(spec, grid)
    inv_axes = invariant_axes(spec, grid, X, beta, sig) if isolate_invariant_faces else ()
    rows, cols, vals = [], [], []
    leak = np.zeros(n)
    src = np.arange(n)
    for off, rate in offsets:
        tgt = idx + off
        inside = np.all((tgt >= 0) & (tgt < shape), axis=1)
        live = rate > 0
        through_genuine = np.zeros(n, dtype=bool)
        for k in gen_axes:
            through_genuine |= tgt[:, k] < 0
        leak += np.where(live & ~inside & through_genuine, rate, 0.0)
        keep = live & inside
        for k in inv_axes:
            keep &= ~((tgt[:, k] == 0) & (idx[:, k] > 0))
        t = grid.flat_index(np.clip(tgt[keep], 0, shape - 1))
        rows.append(src[keep])
        cols.append(t)
        vals.append(rate[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    out_rate = np.bincount(rows, weights=vals, minlength=n)
    rows = np.concatenate([rows, src])
    cols = np.concatenate([cols, src])
    vals = np.concatenate([vals, -out_rate])
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    Q.sum_duplicates()
    Q.sort_indices()
    return Q, leak, gen_axes, inv_axes, fallback


def assemble_B(spec, grid, cgrid):
    """Jump operators (h(x - gamma y) - h(x)) / y, one block per control direction."""
    X = grid.points()
    idx = grid.multi_index()
    shape = np.array(grid.shape)
    n, d = grid.n, grid.d
    lo, hi = grid.lo, grid.hi
    gam = spec.gamma_values(X)
    hs = _spacings(grid)
    hm = np.stack([hs[k][0][idx[:, k]] for k in range(d)], axis=1)
    hp = np.stack([hs[k][1][idx[:, k]] for k in range(d)], axis=1)
    scale = np.maximum(1.0, np.abs(hi - lo).max())
    blocks = []
    for i in range(spec.d3):
        g = gam[:, :, i]
        moving = np.any(np.abs(g) > 0, axis=1)
        sizes = cgrid.sizes(i)
        parts = []
        dropped = []
        # infinitesimal entry: upwind difference in the direction of the push -g
        ok = moving.copy()
        r_rows, r_cols, r_vals = [], [], []
        for k in range(d):
            down = g[:, k] > 0
            up = g[:, k] < 0
            ok &= ~(down & (idx[:, k] == 0)) & ~(up & (idx[:, k] == shape[k] - 1))
        for k in range(d):
            e = np.zeros(d, dtype=np.int64)
            e[k] = 1
            for sel, off, hh in ((g[:, k] > 0, -e, hm[:, k]), (g[:, k] < 0, e, hp[:, k])):
                s = sel & ok
                rate = np.abs(g[s, k]) / hh[s]
                nodes = np.nonzero(s)[0]
                r_rows += [nodes, nodes]
                r_cols += [grid.flat_index(idx[s] + off), nodes]
                r_vals += [rate, -rate]
        nodes0 = np.nonzero(ok)[0]
        for v in np.nonzero(~ok)[0]:
            dropped.append((int(v), 0, "zero displacement" if not moving[v] else "leaves box"))
        if nodes0.size:
            M = sp.coo_matrix((np.concatenate(r_vals), (np.concatenate(r_rows),
                                                        np.concatenate(r_cols))),
                              shape=(n, n)).tocsr()[nodes0]
            parts.append((M, nodes0, np.zeros(nodes0.size, dtype=np.int64),
                          np.zeros(nodes0.size), np.zeros(nodes0.size)))
        # finite jumps, shortened along the ray when the target would leave the box
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = np.where(g > 0, (X - lo) / g, np.inf)
            t_hi = np.where(g < 0, (hi - X) / (-g), np.inf)
        t_max = np.minimum(t_lo, t_hi).min(axis=1)
        last = np.zeros(n)
        for k, y in enumerate(sizes[1:], start=1):
            y_eff = np.minimum(y, t_max)
            keep = moving & (y_eff > 1e-12 * scale) & (y_eff > last * (1 + 1e-12))
            for v in np.nonzero(~keep)[0]:
                reason = ("zero displacement" if not moving[v] or y_eff[v] <= 1e-12 * scale
                          else "duplicate of a shorter jump after truncation")
                dropped.append((int(v), k, reason))
            last = np.where(keep, y_eff, last)
            nodes = np.nonzero(keep)[0]
            if not nodes.size:
                continue
            ye = y_eff[nodes]
            tgt = np.clip(X[nodes] - g[nodes] * ye[:, None], lo, hi)
            W = interpolation_matrix(grid, tgt)
            E = sp.csr_matrix((np.ones(nodes.size), (np.arange(nodes.size), nodes)),
                              shape=(nodes.size, n))
            M = sp.diags(1.0 / ye) @ (W - E)
            parts.append((M.tocsr(), nodes, np.full(nodes.size, k), ye,
                          np.full(nodes.size, y)))
        if parts:
            M = sp.vstack([p[0] for p in parts]).tocsr()
            node = np.concatenate([p[1] for p in parts])
            jump = np.concatenate([p[2] for p in parts])
            size = np.concatenate([p[3] for p in parts])
            nominal = np.concatenate([p[4] for p in parts])
            order = np.lexsort((jump, node))
            M = M[order]
            M.eliminate_zeros()
            M.sort_indices()
            blocks.append(JumpBlock(M, node[order], jump[order], size[order], nominal[order],
                                    sorted(dropped)))
        else:
            blocks.append(JumpBlock(sp.csr_matrix((0, n)), np.zeros(0, dtype=np.int64),
                                    np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0),
                                    sorted(dropped)))
    return blocks


def assemble_R(spec, grid):
    """Reflection operators phi_j . grad h at nodes of the genuine face x_j = 0."""
    if spec.d2 == 0:
        return []
    axes = genuine_axes(spec, grid)
    if not axes:
        raise NoGenuineBoundary("intrinsic directions given but the domain has no genuine "
                                "boundary face (needs the orthant with lo = 0)")
    X = grid.points()
    idx = grid.multi_index()
    shape = np.array(grid.shape)
    n, d = grid.n, grid.d
    phi = spec.phi_values(X)
    hs = _spacings(grid)
    blocks = []
    for j in range(spec.d2):
        face = np.nonzero(idx[:, j] == 0)[0] if j in axes else np.zeros(0, dtype=np.int64)
        p = phi[face, :, j]
        ok = np.any(p != 0, axis=1)
        for k in range(d):
            ok &= ~((p[:, k] > 0) & (idx[face, k] == shape[k] - 1))
            ok &= ~((p[:, k] < 0) & (idx[face, k] == 0))
        nodes = face[ok]
        p = p[ok]
        rows, cols, vals = [], [], []
        r = np.arange(nodes.size)
        for k in range(d):
            e = np.zeros(d, dtype=np.int64)
            e[k] = 1
            ik = idx[nodes, k]
            for sel, off, hh in ((p[:, k] > 0, e, hs[k][1][ik]), (p[:, k] < 0, -e, hs[k][0][ik])):
                rate = np.abs(p[sel, k]) / hh[sel]
                rows += [r[sel], r[sel]]
                cols += [grid.flat_index(idx[nodes[sel]] + off), nodes[sel]]
                vals += [rate, -rate]
        M = sp.coo_matrix((np.concatenate(vals) if vals else np.zeros(0),
                           (np.concatenate(rows) if rows else np.zeros(0, dtype=int),
                            np.concatenate(cols) if cols else np.zeros(0, dtype=int))),
                          shape=(nodes.size, n)).tocsr()
        M.sum_duplicates()
        M.sort_indices()
        blocks.append(ReflectionBlock(M, nodes))
    if sum(b.rows for b in blocks) == 0:
        raise NoGenuineBoundary("no usable reflection rows on the genuine boundary")
    return blocks


def assemble(spec, grid, cgrid, isolate_invariant_faces=True):
    Q, leak, gen, inv, fb = assemble_Q(spec, grid, isolate_invariant_faces)
    B = assemble_B(spec, grid, cgrid) if spec.d3 else []
    R = assemble_R(spec, grid) if spec.case is Case.MIN_QUEUEING else []
    return DiscreteGenerator(Q, leak, B, R, classify_boundary(spec, grid), gen, inv, fb)


def dump_coo(matrix, path):
    """Write ``row col value`` triples sorted by (row, col), 17 significant digits."""
    M = sp.coo_matrix(matrix)
    order = np.lexsort((M.col, M.row))
    with open(path, "w") as fh:
        fh.write(f"# {M.shape[0]} {M.shape[1]}\n")
        for r, c, v in zip(M.row[order], M.col[order], M.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def load_coo(path):
    with open(path) as fh:
        m, n = (int(t) for t in fh.readline()[1:].split())
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((m, n))
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(m, n)).tocsr()
