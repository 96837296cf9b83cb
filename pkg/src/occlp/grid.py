"""Tensor-product state grids, multilinear interpolation and control grids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class DegenerateAxis(ValueError):
    pass


class OutOfBox(ValueError):
    pass


BOX_TOL = 1e-12


@dataclass(eq=False)
class Grid:
    """Tensor grid with row-major flat indexing (last axis fastest)."""

    axes: tuple

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for k, a in enumerate(self.axes):
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise DegenerateAxis(f"axis {k} needs at least two strictly increasing nodes")

    @property
    def d(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    @property
    def n(self):
        return int(np.prod(self.shape))

    @property
    def lo(self):
        return np.array([a[0] for a in self.axes])

    @property
    def hi(self):
        return np.array([a[-1] for a in self.axes])

    @property
    def spacing(self):
        """Per-axis spacing for uniform axes, nan otherwise."""
        out = []
        for a in self.axes:
            h = (a[-1] - a[0]) / (a.size - 1)
            out.append(h if np.allclose(np.diff(a), h, rtol=1e-9, atol=0) else np.nan)
        return np.array(out)

    def flat_index(self, multi):
        return np.ravel_multi_index(tuple(np.asarray(multi).T), self.shape)

    def multi_index(self, flat=None):
        flat = np.arange(self.n) if flat is None else np.asarray(flat)
        return np.stack(np.unravel_index(flat, self.shape), axis=-1)

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_volumes(self):
        """Voronoi-style cell volume attached to each node."""
        widths = []
        for a in self.axes:
            w = np.empty_like(a)
            w[1:-1] = 0.5 * (a[2:] - a[:-2])
            w[0] = 0.5 * (a[1] - a[0])
            w[-1] = 0.5 * (a[-1] - a[-2])
            widths.append(w)
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        return np.asarray(vol).ravel()

    def boundary_mask(self):
        idx = self.multi_index()
        shape = np.array(self.shape)
        return np.any((idx == 0) | (idx == shape - 1), axis=1)

    def same_as(self, other):
        return self.shape == other.shape and all(
            np.array_equal(a, b) for a, b in zip(self.axes, other.axes))


def _as_box(box):
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = box.reshape(1, 2)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValueError("box must be a (lo, hi) pair or a sequence of pairs")
    return box


def make_uniform_grid(box, counts):
    """Uniform grid on ``box`` (pair or list of pairs) with ``counts`` nodes per axis."""
    box = _as_box(box)
    counts = np.atleast_1d(np.asarray(counts, dtype=int))
    if counts.size == 1 and box.shape[0] > 1:
        counts = np.repeat(counts, box.shape[0])
    if counts.size != box.shape[0]:
        raise ValueError("counts must match the number of axes")
    axes = []
    for k, ((lo, hi), c) in enumerate(zip(box, counts)):
        if c < 2 or not hi > lo:
            raise DegenerateAxis(f"axis {k}: need count >= 2 and hi > lo")
        h = (hi - lo) / (c - 1)
        a = lo + h * np.arange(c)
        a[-1] = hi
        axes.append(a)
    return Grid(tuple(axes))


def _axis_weights(axis, t):
    """Bracketing indices and weights of points ``t`` on a single axis."""
    j = np.searchsorted(axis, t, side="right") - 1
    j = np.clip(j, 0, axis.size - 2)
    h = axis[j + 1] - axis[j]
    w1 = (t - axis[j]) / h
    w1 = np.clip(w1, 0.0, 1.0)
    return j, 1.0 - w1, w1


def _check_inside(grid, pts):
    lo, hi = grid.lo, grid.hi
    scale = np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    bad = np.any((pts < lo - BOX_TOL * scale) | (pts > hi + BOX_TOL * scale), axis=-1)
    if np.any(bad):
        raise OutOfBox(f"point {pts[np.argmax(bad)]} lies outside the grid box")
    return np.clip(pts, lo, hi)


def interpolation_matrix(grid, points):
    """Sparse (P x n) matrix of multilinear weights for each row of ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.d:
        raise ValueError("point dimension does not match grid")
    pts = _check_inside(grid, pts)
    P = pts.shape[0]
    per_axis = [_axis_weights(a, pts[:, k]) for k, a in enumerate(grid.axes)]
    rows, cols, vals = [], [], []
    strides = np.array([int(np.prod(grid.shape[k + 1:])) for k in range(grid.d)])
    for corner in range(2 ** grid.d):
        flat = np.zeros(P, dtype=np.int64)
        w = np.ones(P)
        for k in range(grid.d):
            bit = (corner >> (grid.d - 1 - k)) & 1
            j, w0, w1 = per_axis[k]
            flat += (j + bit) * strides[k]
            w = w * (w1 if bit else w0)
        keep = w > 0
        rows.append(np.nonzero(keep)[0])
        cols.append(flat[keep])
        vals.append(w[keep])
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(P, grid.n)).tocsr()
    M.sum_duplicates()
    M.sort_indices()
    return M


def interpolation_weights(grid, point):
    """Sparse weights of a single point as ``(indices, weights)``."""
    row = interpolation_matrix(grid, np.reshape(point, (1, -1)))
    return row.indices.copy(), row.data.copy()


@dataclass
class ControlGrid:
    """Jump sizes per control direction; entry 0 is the infinitesimal one."""

    jumps: list = field(default_factory=list)

    def __post_init__(self):
        cleaned = []
        for i, y in enumerate(self.jumps):
            y = np.asarray(y, dtype=float).ravel()
            if np.any(y <= 0) or np.any(np.diff(y) <= 0):
                raise ValueError(f"jump sizes for control {i} must be positive and increasing")
            cleaned.append(y)
        self.jumps = cleaned

    @property
    def d3(self):
        return len(self.jumps)

    def sizes(self, i):
        """Sizes for control ``i`` with 0.0 marking the infinitesimal entry."""
        return np.concatenate([[0.0], self.jumps[i]])

    def count(self, i):
        return self.jumps[i].size + 1


def make_control_grid(d3, grid=None, jumps=None, y_min=None, ratio=2.0, count=None):
    """Geometric jump grid ``y_min * ratio**k`` unless explicit ``jumps`` are given."""
    if jumps is not None:
        if len(jumps) and np.ndim(jumps[0]) == 0:
            jumps = [jumps] * d3
        if len(jumps) != d3:
            raise ValueError("need one jump list per control direction")
        return ControlGrid(list(jumps))
    if d3 == 0:
        return ControlGrid([])
    if grid is None and (y_min is None or count is None):
        raise ValueError("geometric control grid needs a state grid or explicit y_min/count")
    if y_min is None:
        y_min = float(np.min([np.min(np.diff(a)) for a in grid.axes]))
    if count is None:
        diam = float(np.linalg.norm(grid.hi - grid.lo))
        count = int(np.ceil(np.log(diam / y_min) / np.log(ratio))) + 1
    ys = y_min * ratio ** np.arange(count)
    return ControlGrid([ys.copy() for _ in range(d3)])
