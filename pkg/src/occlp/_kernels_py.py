"""Pure numpy implementation of the Euler-Maruyama kernel, vectorized over paths."""
import numpy as np

from .expr import (OP_ABS, OP_ADD, OP_CONST, OP_DIV, OP_EXP, OP_IPOW, OP_LOG, OP_MAX, OP_MIN,
                   OP_MUL, OP_NEG, OP_POW, OP_SQRT, OP_SUB, OP_X)

STEP_TOO_LARGE = 1
NON_FINITE = 2


def _ipow(base, e):
    k = abs(e)
    if k == 0:
        return np.ones_like(base)
    acc = base
    for _ in range(k - 1):
        acc = acc * base
    return 1.0 / acc if e < 0 else acc


def eval_program(ops, args, start, stop, x):
    """Run one stack program on the rows of ``x`` (P, d)."""
    stack = []
    P = x.shape[0]
    for i in range(start, stop):
        op = ops[i]
        if op == OP_CONST:
            stack.append(np.full(P, args[i]))
        elif op == OP_X:
            stack.append(x[:, int(args[i])].copy())
        elif op == OP_NEG:
            stack[-1] = -stack[-1]
        elif op == OP_IPOW:
            stack[-1] = _ipow(stack[-1], int(args[i]))
        elif op in (OP_EXP, OP_LOG, OP_SQRT, OP_ABS):
            f = {OP_EXP: np.exp, OP_LOG: np.log, OP_SQRT: np.sqrt, OP_ABS: np.abs}[op]
            stack[-1] = f(stack[-1])
        else:
            b = stack.pop()
            a = stack.pop()
            if op == OP_ADD:
                stack.append(a + b)
            elif op == OP_SUB:
                stack.append(a - b)
            elif op == OP_MUL:
                stack.append(a * b)
            elif op == OP_DIV:
                stack.append(a / b)
            elif op == OP_POW:
                stack.append(np.power(a, b))
            elif op == OP_MIN:
                stack.append(np.fmin(a, b))
            elif op == OP_MAX:
                stack.append(np.fmax(a, b))
    return stack[0]


def advance(x, z, dt, ops, args, starts, clamp_lo, clamp_hi, max_step, record,
            mids, mid_start, strides, grid_lo, grid_hi, counts, push_lo, push_hi, s1, s2,
            status, threads=1):
    """Advance all paths over the steps in ``z`` (P, S, d1); arrays are updated in place."""
    P, d = x.shape
    S, d1 = z.shape[1], z.shape[2]
    sq = np.sqrt(dt)
    n_out = counts.shape[1] - 1
    live = status == 0
    with np.errstate(all="ignore"):
        for s in range(S):
            if not live.any():
                break
            inc = np.empty((P, d))
            for k in range(d):
                b = eval_program(ops, args, starts[k], starts[k + 1], x)
                acc = b * dt
                for l in range(d1):
                    q = d + k * d1 + l
                    sig = eval_program(ops, args, starts[q], starts[q + 1], x)
                    acc = acc + sig * sq * z[:, s, l]
                inc[:, k] = acc
            norm = np.sqrt(np.sum(inc * inc, axis=1))
            big = live & ~(norm <= max_step)
            status[big] = STEP_TOO_LARGE
            live &= ~big
            xn = x + inc
            bad = live & ~np.all(np.isfinite(xn), axis=1)
            status[bad] = NON_FINITE
            live &= ~bad
            x[live] = xn[live]
            below = live[:, None] & (x < clamp_lo)
            above = live[:, None] & (x > clamp_hi)
            if record:
                push_lo += np.where(below, clamp_lo - x, 0.0)
                push_hi += np.where(above, x - clamp_hi, 0.0)
            x[:] = np.where(below, clamp_lo, np.where(above, clamp_hi, x))
            if record:
                flat = np.zeros(P, dtype=np.int64)
                for k in range(d):
                    m = mids[mid_start[k]:mid_start[k + 1]]
                    flat += np.searchsorted(m, x[:, k], side="right") * strides[k]
                outside = np.any((x < grid_lo) | (x > grid_hi), axis=1)
                flat[outside] = n_out
                rows = np.nonzero(live)[0]
                np.add.at(counts, (rows, flat[rows]), 1)
                s1[live] += x[live]
                s2[live] += x[live] * x[live]
    return status
