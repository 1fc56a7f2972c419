"""Small dense linear algebra: Jacobi eigensolver, cosine similarity, weighted means."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._accel import HAVE_NUMBA, jit
from .errors import (
    DimensionMismatch,
    EmptyInput,
    NoConvergence,
    NonSymmetric,
    ZeroVector,
)

MAX_SWEEPS = 100
CONVERGENCE_RTOL = 1e-12
SYMMETRY_ATOL = 1e-9
ZERO_NORM = 1e-30


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    vectors: Optional[np.ndarray] = None


def _rotation(app, aqq, apq):
    theta = (aqq - app) / (2.0 * apq)
    if abs(theta) > 1e150:
        t = 0.5 / theta
    elif theta >= 0.0:
        t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
    else:
        t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
    c = 1.0 / np.sqrt(t * t + 1.0)
    return c, t * c


def _jacobi_numpy(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    for sweep in range(max_sweeps + 1):
        off = np.sqrt(np.sum((a - np.diag(np.diag(a))) ** 2))
        if off <= tol:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                c, s = _rotation(a[p, p], a[q, q], apq)
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, -1


def _jacobi_loops(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if np.sqrt(off) <= tol:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                elif theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return np.diag(a).copy(), v, -1


_jacobi_jit = jit(_jacobi_loops)


def jacobi_eigh(a, tol, max_sweeps=MAX_SWEEPS, use_numba=None):
    """Cyclic Jacobi on a symmetric float64 matrix (modified in place).

    Returns ``(diag, vectors, sweeps)``; ``sweeps == -1`` signals the cap was hit.
    """
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and _jacobi_jit is not None:
        return _jacobi_jit(a, tol, max_sweeps)
    return _jacobi_numpy(a, tol, max_sweeps)


def _canonical_signs(vectors):
    # first entry of largest magnitude made positive, so output is reproducible
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eigen(m, want_vectors=False, max_sweeps=MAX_SWEEPS, use_numba=None):
    """Eigen-decomposition of a real symmetric matrix, eigenvalues ascending.

    Raises
    ------
    NonSymmetric
        If ``m`` departs from symmetry by more than 1e-9 (scaled by its
        largest entry when that exceeds one).
    NoConvergence
        If off-diagonal mass is still above ``1e-12 * ||m||_F`` after
        ``max_sweeps`` sweeps.
    """
    a = np.array(m, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    asym = float(np.max(np.abs(a - a.T)))
    if asym > SYMMETRY_ATOL * scale:
        raise NonSymmetric(f"max |m - m.T| = {asym:.3e}")
    a = 0.5 * (a + a.T)
    tol = CONVERGENCE_RTOL * float(np.linalg.norm(a))
    diag, vecs, sweeps = jacobi_eigh(a, tol, max_sweeps, use_numba)
    if sweeps < 0:
        raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    order = np.argsort(diag, kind="stable")
    values = diag[order]
    if not want_vectors:
        return Spectrum(values)
    return Spectrum(values, _canonical_signs(vecs[:, order]))


def cosine(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1 or u.size < 1:
        raise DimensionMismatch(f"cosine needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < ZERO_NORM or nv < ZERO_NORM:
        raise ZeroVector("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _cosine_gram_numpy(h):
    norms = np.sqrt(np.sum(h * h, axis=1))
    live = norms >= ZERO_NORM
    unit = np.zeros_like(h)
    unit[live] = h[live] / norms[live, None]
    k = np.clip(unit @ unit.T, -1.0, 1.0)
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, 1.0)
    return k


def _cosine_gram_loops(h):
    n, d = h.shape
    norms = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += h[i, j] * h[i, j]
        norms[i] = np.sqrt(s)
    k = np.empty((n, n))
    for a in range(n):
        k[a, a] = 1.0
        for b in range(a + 1, n):
            if norms[a] < 1e-30 or norms[b] < 1e-30:
                c = 0.0
            else:
                s = 0.0
                for j in range(d):
                    s += h[a, j] * h[b, j]
                c = s / (norms[a] * norms[b])
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
            k[a, b] = c
            k[b, a] = c
    return k


_cosine_gram_jit = jit(_cosine_gram_loops)


def cosine_gram(rows, use_numba=None):
    """Pairwise cosine matrix of the rows of ``rows``.

    A zero row has similarity 0 with every other row and 1 with itself.
    """
    h = np.ascontiguousarray(rows, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise DimensionMismatch(f"expected a 2-D array of rows, got shape {h.shape}")
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and _cosine_gram_jit is not None:
        return _cosine_gram_jit(h)
    return _cosine_gram_numpy(h)


def weighted_average(items: Sequence, weights: Sequence) -> np.ndarray:
    if len(items) == 0:
        raise EmptyInput("weighted_average of no items")
    if len(items) != len(weights):
        raise DimensionMismatch(f"{len(items)} items but {len(weights)} weights")
    if len({np.shape(it) for it in items}) != 1:
        raise DimensionMismatch("items have unequal lengths")
    x = np.asarray(items, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise EmptyInput("weights sum to zero")
    return np.tensordot(w, x, axes=1) / total

