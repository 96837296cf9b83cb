# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Euler-Maruyama kernel; same contract as the numpy fallback."""
from cython.parallel cimport prange
from libc.math cimport exp, log, sqrt, fabs, pow, fmin, fmax, isfinite

cdef enum:
    OP_CONST = 0
    OP_X = 1
    OP_NEG = 2
    OP_ADD = 3
    OP_SUB = 4
    OP_MUL = 5
    OP_DIV = 6
    OP_POW = 7
    OP_IPOW = 8
    OP_EXP = 9
    OP_LOG = 10
    OP_SQRT = 11
    OP_ABS = 12
    OP_MIN = 13
    OP_MAX = 14
    STACK = 64
    MAXD = 16
    ERR_STEP = 1
    ERR_NONFINITE = 2

STEP_TOO_LARGE = 1
NON_FINITE = 2


cdef inline double _ipow(double b, int e) noexcept nogil:
    cdef int k = e if e >= 0 else -e
    cdef int i
    cdef double acc
    if k == 0:
        return 1.0
    acc = b
    for i in range(k - 1):
        acc = acc * b
    if e < 0:
        return 1.0 / acc
    return acc


cdef inline double _eval(const int[::1] ops, const double[::1] args, long start, long stop,
                         const double* x, double* st) noexcept nogil:
    cdef long i
    cdef int sp = 0
    cdef int op
    for i in range(start, stop):
        op = ops[i]
        if op == OP_CONST:
            st[sp] = args[i]
            sp += 1
        elif op == OP_X:
            st[sp] = x[<int>args[i]]
            sp += 1
        elif op == OP_NEG:
            st[sp - 1] = -st[sp - 1]
        elif op == OP_IPOW:
            st[sp - 1] = _ipow(st[sp - 1], <int>args[i])
        elif op == OP_EXP:
            st[sp - 1] = exp(st[sp - 1])
        elif op == OP_LOG:
            st[sp - 1] = log(st[sp - 1])
        elif op == OP_SQRT:
            st[sp - 1] = sqrt(st[sp - 1])
        elif op == OP_ABS:
            st[sp - 1] = fabs(st[sp - 1])
        else:
            sp -= 1
            if op == OP_ADD:
                st[sp - 1] = st[sp - 1] + st[sp]
            elif op == OP_SUB:
                st[sp - 1] = st[sp - 1] - st[sp]
            elif op == OP_MUL:
                st[sp - 1] = st[sp - 1] * st[sp]
            elif op == OP_DIV:
                st[sp - 1] = st[sp - 1] / st[sp]
            elif op == OP_POW:
                st[sp - 1] = pow(st[sp - 1], st[sp])
            elif op == OP_MIN:
                st[sp - 1] = fmin(st[sp - 1], st[sp])
            elif op == OP_MAX:
                st[sp - 1] = fmax(st[sp - 1], st[sp])
    return st[0]


cdef inline long _bisect(const double[::1] mids, long lo, long hi, double v) noexcept nogil:
    # number of entries in mids[lo:hi] that are <= v
    cdef long a = lo, b = hi, m
    while a < b:
        m = (a + b) // 2
        if mids[m] <= v:
            a = m + 1
        else:
            b = m
    return a - lo


cdef int _path(long p, double[:, ::1] x, const double[:, :, ::1] z, double dt, double sq,
               const int[::1] ops, const double[::1] args, const long[::1] starts,
               const double[::1] clamp_lo, const double[::1] clamp_hi, double max_step,
               int record, const double[::1] mids, const long[::1] mid_start,
               const long[::1] strides, const double[::1] grid_lo, const double[::1] grid_hi,
               long[:, ::1] counts, double[:, ::1] push_lo, double[:, ::1] push_hi,
               double[:, ::1] s1, double[:, ::1] s2) noexcept nogil:
    cdef long d = x.shape[1]
    cdef long S = z.shape[1]
    cdef long d1 = z.shape[2]
    cdef long n_out = counts.shape[1] - 1
    cdef double st[STACK]
    cdef double xc[MAXD]
    cdef double inc[MAXD]
    cdef long s, k, l, q, flat
    cdef double acc, sig, nrm, v
    cdef int outside
    for k in range(d):
        xc[k] = x[p, k]
    for s in range(S):
        nrm = 0.0
        for k in range(d):
            acc = _eval(ops, args, starts[k], starts[k + 1], xc, st) * dt
            for l in range(d1):
                q = d + k * d1 + l
                sig = _eval(ops, args, starts[q], starts[q + 1], xc, st)
                acc = acc + sig * sq * z[p, s, l]
            inc[k] = acc
            nrm = nrm + acc * acc
        nrm = sqrt(nrm)
        if not (nrm <= max_step):
            for k in range(d):
                x[p, k] = xc[k]
            return ERR_STEP
        for k in range(d):
            v = xc[k] + inc[k]
            if not isfinite(v):
                for k in range(d):
                    x[p, k] = xc[k]
                return ERR_NONFINITE
            inc[k] = v
        for k in range(d):
            xc[k] = inc[k]
        for k in range(d):
            if xc[k] < clamp_lo[k]:
                if record:
                    push_lo[p, k] += clamp_lo[k] - xc[k]
                xc[k] = clamp_lo[k]
            elif xc[k] > clamp_hi[k]:
                if record:
                    push_hi[p, k] += xc[k] - clamp_hi[k]
                xc[k] = clamp_hi[k]
        if record:
            flat = 0
            outside = 0
            for k in range(d):
                if xc[k] < grid_lo[k] or xc[k] > grid_hi[k]:
                    outside = 1
                flat = flat + _bisect(mids, mid_start[k], mid_start[k + 1], xc[k]) * strides[k]
                s1[p, k] += xc[k]
                s2[p, k] += xc[k] * xc[k]
            if outside:
                flat = n_out
            counts[p, flat] += 1
    for k in range(d):
        x[p, k] = xc[k]
    return 0


def advance(double[:, ::1] x, const double[:, :, ::1] z, double dt, const int[::1] ops,
            const double[::1] args, const long[::1] starts, const double[::1] clamp_lo,
            const double[::1] clamp_hi, double max_step, int record, const double[::1] mids,
            const long[::1] mid_start, const long[::1] strides, const double[::1] grid_lo,
            const double[::1] grid_hi, long[:, ::1] counts, double[:, ::1] push_lo,
            double[:, ::1] push_hi, double[:, ::1] s1, double[:, ::1] s2, long[::1] status,
            int threads=1):
    """Advance all paths over the steps in ``z``; arrays are updated in place."""
    cdef long P = x.shape[0]
    cdef long p
    cdef double sq = sqrt(dt)
    if x.shape[1] > MAXD:
        raise ValueError("compiled kernel supports at most 16 state dimensions")
    for p in prange(P, nogil=True, num_threads=max(threads, 1), schedule="static"):
        if status[p] == 0:
            status[p] = _path(p, x, z, dt, sq, ops, args, starts, clamp_lo, clamp_hi,
                              max_step, record, mids, mid_start, strides, grid_lo, grid_hi,
                              counts, push_lo, push_hi, s1, s2)
    return status
