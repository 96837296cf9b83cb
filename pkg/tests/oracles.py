"""Independent reference computations used by the tests."""
import itertools

import numpy as np
from scipy.stats import norm


def enumerate_bases(c, A, b, sense="min"):
    """Best basic feasible solution of ``A x = b, x >= 0`` by exhaustive search.

    Returns (value, x) or (None, None) when no basis is feasible.  ``A`` must
    have full row rank and the feasible set must be bounded.
    """
    m, n = A.shape
    best, best_x = None, None
    for cols in itertools.combinations(range(n), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-10:
            continue
        xb = np.linalg.solve(B, b)
        if xb.min() < -1e-9:
            continue
        x = np.zeros(n)
        x[list(cols)] = xb
        v = float(c @ x)
        if best is None or (v < best if sense == "min" else v > best):
            best, best_x = v, x
    return best, best_x


def random_bounded_lp(seed, n=None, m=None):
    """Random instance with a positive first row so the feasible set is bounded."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 9))
    m = m or int(rng.integers(1, min(4, n - 1) + 1))
    A = rng.integers(-5, 6, size=(m, n)).astype(float)
    A[0] = rng.integers(1, 6, size=n)
    x0 = rng.uniform(0, 1, n) * (rng.uniform(size=n) < 0.7)
    b = A @ x0
    if rng.uniform() < 0.15:
        b[-1] += rng.choice([-1.0, 1.0]) * 50.0  # often infeasible
    c = rng.integers(-5, 6, size=n).astype(float)
    sense = "min" if rng.uniform() < 0.5 else "max"
    return c, A, b, sense


def half_normal_cdf(x, theta=1.0, sigma=2 ** 0.5):
    s = sigma / np.sqrt(2 * theta)
    return 2 * norm.cdf(np.asarray(x) / s) - 1


def w1_to_continuous(x, w, cdf, fine=200001):
    """W1 between node weights (a step CDF) and a continuous law on [x0, xn]."""
    t = np.linspace(x[0], x[-1], fine)
    F_step = np.cumsum(w)[np.searchsorted(x, t, side="right") - 1]
    F = cdf(t)
    diff = np.abs(F_step - F)
    tail = float(1 - cdf(x[-1]))  # mass beyond the box, carried at least to its end
    return float(np.trapezoid(diff, t) if hasattr(np, "trapezoid") else np.trapz(diff, t)), tail
