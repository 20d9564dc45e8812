"""Pure-Python tape evaluator: the fallback twin of the compiled ``ntp._tape``.

Both backends interpret the same packed node buffers.  Node kinds:

====  =======  =========================================================
code  kind     payload
====  =======  =========================================================
0     CONST    x0 = value
1     LOOKUP   a = embedding row index
2     RBF      a, b = LOOKUP node ids; x0 = mu
3     MIN      args = node ids
4     MAX      args = node ids
5     COMPLEX  a, b, c = LOOKUP node ids (relation, subject, object)
6     SIGMOID  a = node id
7     CLAMP    a = node id; x0 = lo, x1 = hi
8     NEGLOG   a = node id; b = 1 for -log(1-x) instead of -log(x)
9     SUM      args = node ids
====  =======  =========================================================

``MIN``/``MAX`` route the whole adjoint to the first extremal input.
``RBF`` at zero distance has gradient zero by definition.
"""

import math

import numpy as np

CONST, LOOKUP, RBF, MIN, MAX, COMPLEX, SIGMOID, CLAMP, NEGLOG, SUM = range(10)


def rbf_value(u, v, mu: float) -> float:
    d = u - v
    dist = math.sqrt(float(np.dot(d, d)))
    return math.exp(-dist / (2.0 * mu * mu))


def sigmoid_value(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def neglog_value(x: float, complement: bool) -> float:
    arg = 1.0 - x if complement else x
    if arg <= 0.0:
        return float("nan")
    return -math.log(arg)


def complex_value(s, i, j, k: int) -> float:
    re_s, im_s = s[:k], s[k:]
    re_i, im_i = i[:k], i[k:]
    re_j, im_j = j[:k], j[k:]
    z = (
        float(np.dot(re_s, re_i * re_j))
        + float(np.dot(re_s, im_i * im_j))
        + float(np.dot(im_s, re_i * im_j))
        - float(np.dot(im_s, im_i * re_j))
    )
    return sigmoid_value(z)


def forward(kind, a, b, c, x0, x1, args, aofs, alen, emb, k, values) -> int:
    """Recompute all node values in index order.

    Returns the id of the first non-finite node, or -1 on success.
    """
    n = len(kind)
    for i in range(n):
        op = kind[i]
        if op == CONST:
            v = x0[i]
        elif op == LOOKUP:
            v = 0.0
        elif op == RBF:
            v = rbf_value(emb[a[a[i]]], emb[a[b[i]]], x0[i])
        elif op == MIN:
            ofs = aofs[i]
            v = min(values[args[ofs + t]] for t in range(alen[i]))
        elif op == MAX:
            ofs = aofs[i]
            v = max(values[args[ofs + t]] for t in range(alen[i]))
        elif op == COMPLEX:
            v = complex_value(emb[a[a[i]]], emb[a[b[i]]], emb[a[c[i]]], k)
        elif op == SIGMOID:
            v = sigmoid_value(values[a[i]])
        elif op == CLAMP:
            v = min(max(values[a[i]], x0[i]), x1[i])
        elif op == NEGLOG:
            v = neglog_value(values[a[i]], bool(b[i]))
        elif op == SUM:
            ofs = aofs[i]
            v = sum(values[args[ofs + t]] for t in range(alen[i]))
        else:
            raise ValueError(f"unknown node kind {op}")
        if not math.isfinite(v):
            return i
        values[i] = v
    return -1


def backward(kind, a, b, c, x0, x1, args, aofs, alen, emb, k, values,
             root: int, adjoints, pgrads) -> None:
    """Reverse sweep from ``root``; accumulates parameter grads into pgrads."""
    adjoints[root] = 1.0
    for i in range(root, -1, -1):
        g = adjoints[i]
        if g == 0.0:
            continue
        op = kind[i]
        if op == RBF:
            ru, rv = a[a[i]], a[b[i]]
            u, v = emb[ru], emb[rv]
            d = u - v
            dist = math.sqrt(float(np.dot(d, d)))
            if dist > 0.0:
                coef = -g * values[i] / (2.0 * x0[i] * x0[i] * dist)
                pgrads[ru] += coef * d
                pgrads[rv] -= coef * d
        elif op == MIN or op == MAX:
            ofs = aofs[i]
            best = args[ofs]
            vb = values[best]
            if op == MIN:
                for t in range(1, alen[i]):
                    cand = args[ofs + t]
                    if values[cand] < vb:
                        best, vb = cand, values[cand]
            else:
                for t in range(1, alen[i]):
                    cand = args[ofs + t]
                    if values[cand] > vb:
                        best, vb = cand, values[cand]
            adjoints[best] += g
        elif op == COMPLEX:
            rs, ri, rj = a[a[i]], a[b[i]], a[c[i]]
            s, si, sj = emb[rs], emb[ri], emb[rj]
            re_s, im_s = s[:k], s[k:]
            re_i, im_i = si[:k], si[k:]
            re_j, im_j = sj[:k], sj[k:]
            val = values[i]
            dz = g * val * (1.0 - val)
            pgrads[rs][:k] += dz * (re_i * re_j + im_i * im_j)
            pgrads[rs][k:] += dz * (re_i * im_j - im_i * re_j)
            pgrads[ri][:k] += dz * (re_s * re_j + im_s * im_j)
            pgrads[ri][k:] += dz * (re_s * im_j - im_s * re_j)
            pgrads[rj][:k] += dz * (re_s * re_i - im_s * im_i)
            pgrads[rj][k:] += dz * (re_s * im_i + im_s * re_i)
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
