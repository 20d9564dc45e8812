# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tape evaluator; mirrors ``ntp._tape_py`` node for node.

Same packed-buffer layout and the same tie rules: min/max send the whole
adjoint to the first extremal input, and the RBF gradient at zero
distance is 0.  Values agree with the fallback to double rounding (the
fallback's dot products may sum in a different order); each backend on
its own is deterministic.
"""

from libc.math cimport exp, isfinite, log, sqrt

cdef enum:
    CONST = 0
    LOOKUP = 1
    RBF = 2
    MIN = 3
    MAX = 4
    COMPLEX = 5
    SIGMOID = 6
    CLAMP = 7
    NEGLOG = 8
    SUM = 9


cdef inline double _rbf(const double[:, ::1] emb, int ru, int rv,
                        double mu) nogil:
    cdef Py_ssize_t t, dim = emb.shape[1]
    cdef double d, acc = 0.0
    for t in range(dim):
        d = emb[ru, t] - emb[rv, t]
        acc += d * d
    return exp(-sqrt(acc) / (2.0 * mu * mu))


cdef inline double _sigmoid(double x) nogil:
    cdef double z
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


cdef inline double _complex_logit(const double[:, ::1] emb, int rs, int ri,
                                  int rj, int k) nogil:
    cdef Py_ssize_t t
    cdef double z = 0.0
    for t in range(k):
        z += emb[rs, t] * (emb[ri, t] * emb[rj, t]
                           + emb[ri, k + t] * emb[rj, k + t])
        z += emb[rs, k + t] * (emb[ri, t] * emb[rj, k + t]
                               - emb[ri, k + t] * emb[rj, t])
    return z


def forward(const int[::1] kind, const int[::1] a, const int[::1] b,
            const int[::1] c, const double[::1] x0, const double[::1] x1,
            const int[::1] args, const int[::1] aofs, const int[::1] alen,
            const double[:, ::1] emb, int k, double[::1] values):
    """Recompute all node values in index order.

    Returns the id of the first non-finite node, or -1 on success.
    """
    cdef Py_ssize_t i, t, n = kind.shape[0]
    cdef int op, ofs
    cdef double v, cand, arg
    for i in range(n):
        op = kind[i]
        if op == CONST:
            v = x0[i]
        elif op == LOOKUP:
            v = 0.0
        elif op == RBF:
            v = _rbf(emb, a[a[i]], a[b[i]], x0[i])
        elif op == MIN:
            ofs = aofs[i]
            v = values[args[ofs]]
            for t in range(1, alen[i]):
                cand = values[args[ofs + t]]
                if cand < v:
                    v = cand
        elif op == MAX:
            ofs = aofs[i]
            v = values[args[ofs]]
            for t in range(1, alen[i]):
                cand = values[args[ofs + t]]
                if cand > v:
                    v = cand
        elif op == COMPLEX:
            v = _sigmoid(_complex_logit(emb, a[a[i]], a[b[i]], a[c[i]], k))
        elif op == SIGMOID:
            v = _sigmoid(values[a[i]])
        elif op == CLAMP:
            v = values[a[i]]
            if v < x0[i]:
                v = x0[i]
            if v > x1[i]:
                v = x1[i]
        elif op == NEGLOG:
            arg = values[a[i]]
            if b[i]:
                arg = 1.0 - arg
            if arg <= 0.0:
                return i
            v = -log(arg)
        elif op == SUM:
            ofs = aofs[i]
            v = 0.0
            for t in range(alen[i]):
                v += values[args[ofs + t]]
        else:
            raise ValueError(f"unknown node kind {op}")
        if not isfinite(v):
            return i
        values[i] = v
    return -1


def backward(const int[::1] kind, const int[::1] a, const int[::1] b,
             const int[::1] c, const double[::1] x0, const double[::1] x1,
             const int[::1] args, const int[::1] aofs, const int[::1] alen,
             const double[:, ::1] emb, int k, const double[::1] values,
             int root, double[::1] adjoints, double[:, ::1] pgrads):
    """Reverse sweep from ``root``; accumulates parameter grads into pgrads."""
    cdef Py_ssize_t i, t
    cdef int op, ofs, ru, rv, rs, ri, rj, best, cand
    cdef double g, dist, acc, d, coef, vb, val, dz, x
    adjoints[root] = 1.0
    for i in range(root, -1, -1):
        g = adjoints[i]
        if g == 0.0:
            continue
        op = kind[i]
        if op == RBF:
            ru = a[a[i]]
            rv = a[b[i]]
            acc = 0.0
            for t in range(emb.shape[1]):
                d = emb[ru, t] - emb[rv, t]
                acc += d * d
            dist = sqrt(acc)
            if dist > 0.0:
                coef = -g * values[i] / (2.0 * x0[i] * x0[i] * dist)
                for t in range(emb.shape[1]):
                    d = emb[ru, t] - emb[rv, t]
                    pgrads[ru, t] += coef * d
                    pgrads[rv, t] -= coef * d
        elif op == MIN or op == MAX:
            ofs = aofs[i]
            best = args[ofs]
            vb = values[best]
            if op == MIN:
                for t in range(1, alen[i]):
                    cand = args[ofs + t]
                    if values[cand] < vb:
                        best = cand
                        vb = values[cand]
            else:
                for t in range(1, alen[i]):
                    cand = args[ofs + t]
                    if values[cand] > vb:
                        best = cand
                        vb = values[cand]
            adjoints[best] += g
        elif op == COMPLEX:
            rs = a[a[i]]
            ri = a[b[i]]
            rj = a[c[i]]
            val = values[i]
            dz = g * val * (1.0 - val)
            for t in range(k):
                pgrads[rs, t] += dz * (emb[ri, t] * emb[rj, t]
                                       + emb[ri, k + t] * emb[rj, k + t])
                pgrads[rs, k + t] += dz * (emb[ri, t] * emb[rj, k + t]
                                           - emb[ri, k + t] * emb[rj, t])
                pgrads[ri, t] += dz * (emb[rs, t] * emb[rj, t]
                                       + emb[rs, k + t] * emb[rj, k + t])
                pgrads[ri, k + t] += dz * (emb[rs, t] * emb[rj, k + t]
                                           - emb[rs, k + t] * emb[rj, t])
                pgrads[rj, t] += dz * (emb[rs, t] * emb[ri, t]
                                       - emb[rs, k + t] * emb[ri, k + t])
                pgrads[rj, k + t] += dz * (emb[rs, t] * emb[ri, k + t]
                                           + emb[rs, k + t] * emb[ri, t])
        elif op == SIGMOID:
            val = values[i]
            adjoints[a[i]] += g * val * (1.0 - val)
        elif op == CLAMP:
            x = values[a[i]]
            if x0[i] < x < x1[i]:
                adjoints[a[i]] += g
        elif op == NEGLOG:
            x = values[a[i]]
            if b[i]:
                adjoints[a[i]] += g / (1.0 - x)
            else:
                adjoints[a[i]] -= g / x
        elif op == SUM:
            ofs = aofs[i]
            for t in range(alen[i]):
                adjoints[args[ofs + t]] += g
        # CONST and LOOKUP have no inputs.
