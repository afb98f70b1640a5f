"""Compiled inner loops.

Every kernel walks ratings in CSR order (sorted column index within a row),
so results depend only on the data, never on how rows are scheduled.
All kernels release the GIL so block-parallel callers get real concurrency.
"""

import numpy as np
from numba import njit

_EPS = np.finfo(np.float64).eps


@njit(cache=True, nogil=True, inline="always")
def _two_sum(s, c, v):
    # Neumaier compensated accumulation step.
    t = s + v
    if abs(s) >= abs(v):
        c += (s - t) + v
    else:
        c += (v - t) + s
    return t, c


@njit(cache=True, nogil=True)
def dot2(a1, b1, a2, b2):
    """Compensated inner product over two aligned segment pairs."""
    s = 0.0
    c = 0.0
    for k in range(a1.size):
        s, c = _two_sum(s, c, a1[k] * b1[k])
    for k in range(a2.size):
        s, c = _two_sum(s, c, a2[k] * b2[k])
    return s + c


@njit(cache=True, nogil=True)
def _cholesky_solve(A, v, out, nf):
    """In-place lower Cholesky of ``A`` then solve into ``out``.

    Returns False when a pivot is not safely positive relative to the
    largest diagonal entry, which flags a (numerically) singular system.
    """
    dmax = 0.0
    for a in range(nf):
        if A[a, a] > dmax:
            dmax = A[a, a]
    tiny = 64.0 * nf * _EPS * dmax
    for a in range(nf):
        d = A[a, a]
        for k in range(a):
            d -= A[a, k] * A[a, k]
        if not (d > tiny):
            return False
        d = np.sqrt(d)
        A[a, a] = d
        for b in range(a + 1, nf):
            s = A[b, a]
            for k in range(a):
                s -= A[b, k] * A[a, k]
            A[b, a] = s / d
    # forward: L y = v
    for a in range(nf):
        s = v[a]
        for k in range(a):
            s -= A[a, k] * v[k]
        v[a] = s / A[a, a]
    # backward: L^T x = y
    for a in range(nf - 1, -1, -1):
        s = v[a]
        for k in range(a + 1, nf):
            s -= A[k, a] * v[k]
        v[a] = s / A[a, a]
    for a in range(nf):
        out[a] = v[a]
    return True


@njit(cache=True, nogil=True)
def solve_rows(indptr, indices, values, other, lam, rows, out, status):
    """Regularized least-squares update for each row id in ``rows``.

    Row ``i`` of ``out`` receives the solution of
    ``(sum_j o_j o_j^T + lam * n_i I) x = sum_j r_ij o_j`` with ``o_j`` the
    rows of ``other`` addressed by ``indices``. Rows without ratings get
    zeros. ``status[t]`` is set to 1 when the Cholesky route fails.
    """
    nf = other.shape[1]
    A = np.empty((nf, nf))
    v = np.empty(nf)
    for t in range(rows.size):
        i = rows[t]
        start = indptr[i]
        stop = indptr[i + 1]
        status[t] = 0
        if stop == start:
            for a in range(nf):
                out[i, a] = 0.0
            continue
        A[:, :] = 0.0
        v[:] = 0.0
        for k in range(start, stop):
            j = indices[k]
            r = values[k]
            for a in range(nf):
                oa = other[j, a]
                v[a] += r * oa
                for b in range(a + 1):
                    A[a, b] += oa * other[j, b]
        reg = lam * (stop - start)
        for a in range(nf):
            A[a, a] += reg
        if not _cholesky_solve(A, v, out[i], nf):
            status[t] = 1


@njit(cache=True, nogil=True)
def loss(indptr, indices, values, users, items, user_counts, item_counts, lam):
    s = 0.0
    c = 0.0
    nf = users.shape[1]
    for i in range(users.shape[0]):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            e = values[k]
            for a in range(nf):
                e -= users[i, a] * items[j, a]
            s, c = _two_sum(s, c, e * e)
    rs = 0.0
    rc = 0.0
    for i in range(users.shape[0]):
        if user_counts[i] == 0:
            continue
        w = 0.0
        for a in range(nf):
            w += users[i, a] * users[i, a]
        rs, rc = _two_sum(rs, rc, user_counts[i] * w)
    for j in range(items.shape[0]):
        if item_counts[j] == 0:
            continue
        w = 0.0
        for a in range(nf):
            w += items[j, a] * items[j, a]
        rs, rc = _two_sum(rs, rc, item_counts[j] * w)
    return (s + c) + lam * (rs + rc)


@njit(cache=True, nogil=True)
def gradient_rows(indptr, indices, values, this, other, lam, rows, out):
    """``2 lam n_i x_i + 2 sum_j o_j (x_i . o_j - r_ij)`` for each row id."""
    nf = this.shape[1]
    for t in range(rows.size):
        i = rows[t]
        start = indptr[i]
        stop = indptr[i + 1]
        w = 2.0 * lam * (stop - start)
        for a in range(nf):
            out[i, a] = w * this[i, a]
        for k in range(start, stop):
            j = indices[k]
            e = -values[k]
            for a in range(nf):
                e += this[i, a] * other[j, a]
            e *= 2.0
            for a in range(nf):
                out[i, a] += e * other[j, a]


@njit(cache=True, nogil=True)
def quartic(indptr, indices, values, xu, pu, xm, pm, user_counts, item_counts, lam):
    """Coefficients c0..c4 of the loss restricted to the line ``x + alpha p``."""
    nf = xu.shape[1]
    s = np.zeros(5)
    c = np.zeros(5)
    for i in range(xu.shape[0]):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            a = values[k]
            b = 0.0
            d = 0.0
            for q in range(nf):
                a -= xu[i, q] * xm[j, q]
                b += xu[i, q] * pm[j, q] + pu[i, q] * xm[j, q]
                d += pu[i, q] * pm[j, q]
            s[0], c[0] = _two_sum(s[0], c[0], a * a)
            s[1], c[1] = _two_sum(s[1], c[1], -2.0 * a * b)
            s[2], c[2] = _two_sum(s[2], c[2], b * b - 2.0 * a * d)
            s[3], c[3] = _two_sum(s[3], c[3], 2.0 * b * d)
            s[4], c[4] = _two_sum(s[4], c[4], d * d)
    for side in range(2):
        if side == 0:
            x = xu
            p = pu
            counts = user_counts
        else:
            x = xm
            p = pm
            counts = item_counts
        for i in range(x.shape[0]):
            if counts[i] == 0:
                continue
            xx = 0.0
            xp = 0.0
            pp = 0.0
            for q in range(nf):
                xx += x[i, q] * x[i, q]
                xp += x[i, q] * p[i, q]
                pp += p[i, q] * p[i, q]
            w = lam * counts[i]
            s[0], c[0] = _two_sum(s[0], c[0], w * xx)
            s[1], c[1] = _two_sum(s[1], c[1], 2.0 * w * xp)
            s[2], c[2] = _two_sum(s[2], c[2], w * pp)
    return s + c
