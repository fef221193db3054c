"""Symmetric tridiagonal kernels: elimination solves, theta-scheme marching, Sturm bisection.

A matrix is given by its diagonal ``d`` (length n) and off-diagonal ``e`` (length n-1).
"""
from __future__ import annotations

import numpy as np
from numba import njit

_EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny


@njit(cache=True, nogil=True)
def ldl_factor(d, e):
    """LDL^T of an SPD tridiagonal. Returns pivots and unit-lower multipliers."""
    n = d.size
    piv = np.empty(n)
    mult = np.empty(max(n - 1, 0))
    piv[0] = d[0]
    for i in range(1, n):
        mult[i - 1] = e[i - 1] / piv[i - 1]
        piv[i] = d[i] - mult[i - 1] * e[i - 1]
    return piv, mult


@njit(cache=True, nogil=True)
def ldl_solve(piv, mult, rhs):
    n = piv.size
    x = rhs.copy()
    for i in range(1, n):
        x[i] -= mult[i - 1] * x[i - 1]
    x[n - 1] /= piv[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = x[i] / piv[i] - mult[i] * x[i + 1]
    return x


@njit(cache=True, nogil=True)
def tri_matvec(d, e, x):
    n = d.size
    y = d * x
    for i in range(n - 1):
        y[i] += e[i] * x[i + 1]
        y[i + 1] += e[i] * x[i]
    return y


@njit(cache=True, nogil=True)
def theta_march(d, e, u0, src, dt, theta, n_steps, stride):
    """Advance ``u' + A u = g`` by ``n_steps`` theta-scheme steps with fixed ``dt``.

    ``src`` has shape (n_steps + 1, n), or (0, n) for a zero source. Every
    ``stride``-th state (including the first and last) is stored.
    """
    n = d.size
    lhs_d = 1.0 + theta * dt * d
    lhs_e = theta * dt * e
    piv, mult = ldl_factor(lhs_d, lhs_e)
    n_store = n_steps // stride + 1
    out = np.empty((n_store, n))
    out[0] = u0
    u = u0.copy()
    has_src = src.shape[0] > 0
    for j in range(n_steps):
        rhs = u - (1.0 - theta) * dt * tri_matvec(d, e, u)
        if has_src:
            rhs += dt * (theta * src[j + 1] + (1.0 - theta) * src[j])
        u = ldl_solve(piv, mult, rhs)
        if (j + 1) % stride == 0:
            out[(j + 1) // stride] = u
    return out


@njit(cache=True, nogil=True)
def sturm_count(d, e2, x, pivmin):
    """Number of eigenvalues strictly below ``x``; ``e2`` holds squared off-diagonals."""
    n = d.size
    count = 0
    q = d[0] - x
    if abs(q) < pivmin:
        q = -pivmin
    if q < 0.0:
        count += 1
    for i in range(1, n):
        q = d[i] - x - e2[i - 1] / q
        if abs(q) < pivmin:
            q = -pivmin
        if q < 0.0:
            count += 1
    return count


@njit(cache=True, nogil=True)
def gershgorin(d, e):
    n = d.size
    lo = np.inf
    hi = -np.inf
    for i in range(n):
        r = 0.0
        if i > 0:
            r += abs(e[i - 1])
        if i < n - 1:
            r += abs(e[i])
        lo = min(lo, d[i] - r)
        hi = max(hi, d[i] + r)
    return lo, hi


@njit(cache=True, nogil=True)
def bisect_eigenvalues(d, e, k, max_iter):
    """The ``k`` smallest eigenvalues by bisection on the Sturm count.

    Returns the eigenvalues and, per eigenvalue, the number of bisection steps
    used (``max_iter`` means the interval never met its tolerance).
    """
    n = d.size
    e2 = e * e
    lo0, hi0 = gershgorin(d, e)
    scale = max(abs(lo0), abs(hi0))
    pivmin = _TINY * max(1.0, np.max(e2) if n > 1 else 1.0)
    lo0 -= 2.0 * _EPS * scale + pivmin
    hi0 += 2.0 * _EPS * scale + pivmin
    lam = np.empty(k)
    iters = np.empty(k, dtype=np.int64)
    for j in range(k):
        lo = lo0 if j == 0 else max(lo0, lam[j - 1] - 2.0 * _EPS * scale)
        hi = hi0
        it = 0
        while it < max_iter:
            tol = 2.0 * _EPS * max(abs(lo), abs(hi)) + pivmin
            if hi - lo <= tol:
                break
            mid = 0.5 * (lo + hi)
            if sturm_count(d, e2, mid, pivmin) > j:
                hi = mid
            else:
                lo = mid
            it += 1
        lam[j] = 0.5 * (lo + hi)
        iters[j] = it
    return lam, iters


@njit(cache=True, nogil=True)
def gt_solve_pivoted(sub, diag, sup, rhs):
    """General tridiagonal solve with partial pivoting; exact zero pivots are nudged.

    Used for the nearly singular shifted systems of inverse iteration.
    """
    n = diag.size
    dl = sub.copy()
    d = diag.copy()
    du = sup.copy()
    du2 = np.zeros(max(n - 2, 0))
    b = rhs.copy()
    nudge = _EPS * max(np.max(np.abs(d)), 1.0)
    for i in range(n - 1):
        if abs(d[i]) >= abs(dl[i]):
            if d[i] == 0.0:
                d[i] = nudge
            fact = dl[i] / d[i]
            d[i + 1] -= fact * du[i]
            b[i + 1] -= fact * b[i]
        else:
            fact = d[i] / dl[i]
            d[i] = dl[i]
            tmp = d[i + 1]
            d[i + 1] = du[i] - fact * tmp
            if i < n - 2:
                du2[i] = du[i + 1]
                du[i + 1] = -fact * du2[i]
            du[i] = tmp
            tmp = b[i]
            b[i] = b[i + 1]
            b[i + 1] = tmp - fact * b[i + 1]
    if d[n - 1] == 0.0:
        d[n - 1] = nudge
    b[n - 1] /= d[n - 1]
    if n > 1:
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2]
    for i in range(n - 3, -1, -1):
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i]
    return b


@njit(cache=True, nogil=True)
def inverse_iteration(d, e, lam, cluster_tol, n_iter):
    """Unit-Euclidean-norm eigenvectors for ascending eigenvalues ``lam``.

    Vectors whose eigenvalues sit within ``cluster_tol`` of each other are
    re-orthogonalized against one another.
    """
    n = d.size
    k = lam.size
    vecs = np.empty((k, n))
    start = np.empty(n)
    for i in range(n):
        # deterministic, not orthogonal to any eigenvector in practice
        start[i] = 1.0 + 0.5 * np.sin(0.61803398875 * (i + 1) * (i + 3))
    first = 0
    for j in range(k):
        if j > 0 and lam[j] - lam[j - 1] > cluster_tol:
            first = j
        dd = d - lam[j]
        x = start / np.sqrt(np.dot(start, start))
        for _ in range(n_iter):
            x = gt_solve_pivoted(e, dd, e, x)
            for p in range(first, j):
                x -= np.dot(vecs[p], x) * vecs[p]
            x /= np.sqrt(np.dot(x, x))
        for p in range(first, j):
            x -= np.dot(vecs[p], x) * vecs[p]
        x /= np.sqrt(np.dot(x, x))
        # sign convention: largest-magnitude entry positive
        if x[np.argmax(np.abs(x))] < 0.0:
            x = -x
        vecs[j] = x
    return vecs
