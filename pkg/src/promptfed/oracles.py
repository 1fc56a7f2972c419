"""Independent reference computations used by ``promptfed verify`` and the tests.

None of these share code with the implementations they check.
"""

import math
from itertools import permutations

import numpy as np


def adam_reference(w0, grads, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar-loop Adam trajectory; returns the list of parameter vectors after each step."""
    w = [float(x) for x in w0]
    m = [0.0] * len(w)
    v = [0.0] * len(w)
    out = []
    for t, g in enumerate(grads, start=1):
        for k, gk in enumerate(g):
            gk = float(gk)
            m[k] = beta1 * m[k] + (1 - beta1) * gk
            v[k] = beta2 * v[k] + (1 - beta2) * gk * gk
            mh = m[k] / (1 - beta1 ** t)
            vh = v[k] / (1 - beta2 ** t)
            w[k] = w[k] - lr * mh / (math.sqrt(vh) + eps)
        out.append(list(w))
    return out


def charpoly3(a):
    """Coefficients (c2, c1, c0) of det(xI - A) = x^3 + c2 x^2 + c1 x + c0."""
    tr = a[0][0] + a[1][1] + a[2][2]
    minors = (a[0][0] * a[1][1] - a[0][1] * a[1][0]
              + a[0][0] * a[2][2] - a[0][2] * a[2][0]
              + a[1][1] * a[2][2] - a[1][2] * a[2][1])
    det = (a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
           - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
           + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]))
    return -tr, minors, -det


def cubic_real_roots(c2, c1, c0, newton=3):
    """Three real roots of x^3 + c2 x^2 + c1 x + c0 (trigonometric form), ascending."""
    shift = c2 / 3.0
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2 ** 3 / 27.0 - c2 * c1 / 3.0 + c0
    if p >= 0.0:
        roots = [-shift] * 3
    else:
        r = 2.0 * math.sqrt(-p / 3.0)
        arg = max(-1.0, min(1.0, 3.0 * q / (p * r)))
        phi = math.acos(arg) / 3.0
        roots = [r * math.cos(phi - 2.0 * math.pi * k / 3.0) - shift for k in range(3)]
    polished = []
    for x in roots:
        for _ in range(newton):
            f = ((x + c2) * x + c1) * x + c0
            df = (3.0 * x + 2.0 * c2) * x + c1
            if df == 0.0:
                break
            x -= f / df
        polished.append(x)
    return sorted(polished)


def det3(a):
    return -charpoly3(a)[2]


def central_difference_grad(f, w, step=1e-5):
    w = np.asarray(w, dtype=np.float64)
    g = np.empty_like(w)
    flat = w.ravel()
    out = g.ravel()
    for i in range(flat.size):
        up = flat.copy()
        dn = flat.copy()
        up[i] += step
        dn[i] -= step
        out[i] = (f(up.reshape(w.shape)) - f(dn.reshape(w.shape))) / (2.0 * step)
    return g


def lexicographic_assignment(values, vectors):
    """Exhaustive search for the eigenvalue-to-layer pairing.

    Among all bijections, pick the one whose component magnitudes, read in
    descending-eigenvalue order, are lexicographically largest (ties: the
    pairing whose layer indices read smallest).
    """
    L = len(values)
    mags = np.abs(np.asarray(vectors))
    order = list(range(L - 1, -1, -1))
    best_key, best = None, None
    for perm in permutations(range(L)):
        # perm[j] is the layer that receives eigenpair order[j]
        key = tuple(mags[perm[j], order[j]] for j in range(L)) + tuple(-x for x in perm)
        if best_key is None or key > best_key:
            best_key, best = key, perm
    out = np.empty(L)
    for j in range(L):
        out[best[j]] = values[order[j]]
    return out


def max_total_assignment(values, vectors):
    """Exhaustive maximum total |component| pairing (no tie rule)."""
    L = len(values)
    mags = np.abs(np.asarray(vectors))
    best_total, best = -1.0, None
    for perm in permutations(range(L)):
        total = sum(mags[perm[k], k] for k in range(L))
        if total > best_total:
            best_total, best = total, perm
    out = np.empty(L)
    for k in range(L):
        out[best[k]] = values[k]
    return out


def brute_gap_index(eigs, lipschitz):
    for k in range(1, len(eigs)):
        if eigs[k] - eigs[k - 1] > 4.0 * lipschitz:
            return k
    return 0
