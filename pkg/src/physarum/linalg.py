"""Zero fill-in incomplete Cholesky and projected preconditioned CG.

The kernels work on raw CSR arrays and are compiled with numba; the
public entry point is :func:`projected_pcg`.
"""

import numpy as np
from numba import njit

JACOBI = "jacobi"
IC0 = "ic0"


@njit(cache=True)
def _lower_pattern(indptr, indices, data, n):
    """Lower triangle (diagonal included) of a CSR matrix with sorted columns."""
    count = 0
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] <= i:
                count += 1
    lp = np.empty(n + 1, dtype=np.int64)
    li = np.empty(count, dtype=np.int64)
    lv = np.empty(count, dtype=np.float64)
    lp[0] = 0
    q = 0
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] <= i:
                li[q] = indices[p]
                lv[q] = data[p]
                q += 1
        lp[i + 1] = q
    return lp, li, lv


@njit(cache=True)
def ic0_factor(indptr, indices, data, n):
    """Incomplete Cholesky ``L L^T ~ A`` restricted to the pattern of ``tril(A)``.

    Returns ``(lp, li, lv, ok)``; ``ok`` is False when a pivot is not
    strictly positive, in which case the factor is unusable.
    """
    lp, li, lv = _lower_pattern(indptr, indices, data, n)
    # row-oriented left-looking: row i only needs rows k < i
    marker = np.full(n, -1, dtype=np.int64)
    pos = np.zeros(n, dtype=np.int64)
    for i in range(n):
        start, end = lp[i], lp[i + 1]
        if end == start or li[end - 1] != i:
            return lp, li, lv, False
        for p in range(start, end):
            marker[li[p]] = i
            pos[li[p]] = p
        for p in range(start, end - 1):
            k = li[p]
            s = lv[p]
            for q in range(lp[k], lp[k + 1] - 1):
                j = li[q]
                if marker[j] == i and j < k:
                    s -= lv[pos[j]] * lv[q]
            lv[p] = s / lv[lp[k + 1] - 1]
        d = lv[end - 1]
        for p in range(start, end - 1):
            d -= lv[p] * lv[p]
        if not d > 0.0:
            return lp, li, lv, False
        lv[end - 1] = np.sqrt(d)
    return lp, li, lv, True


@njit(cache=True)
def _ic0_apply(lp, li, lv, r, z):
    n = r.shape[0]
    # forward: L y = r
    for i in range(n):
        s = r[i]
        for p in range(lp[i], lp[i + 1] - 1):
            s -= lv[p] * z[li[p]]
        z[i] = s / lv[lp[i + 1] - 1]
    # backward: L^T z = y, column sweep over rows of L
    for i in range(n - 1, -1, -1):
        z[i] /= lv[lp[i + 1] - 1]
        zi = z[i]
        for p in range(lp[i], lp[i + 1] - 1):
            z[li[p]] -= lv[p] * zi


@njit(cache=True)
def _matvec(indptr, indices, data, x, y):
    n = x.shape[0]
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        y[i] = s


@njit(cache=True)
def _remove_mean(v):
    v -= v.sum() / v.shape[0]


@njit(cache=True)
def _precondition(kind, lp, li, lv, diag, r, z):
    if kind == 1:
        _ic0_apply(lp, li, lv, r, z)
    else:
        for i in range(r.shape[0]):
            z[i] = r[i] / diag[i]
    _remove_mean(z)


@njit(cache=True)
def _pcg(indptr, indices, data, b, x, tol, max_iter, kind, lp, li, lv, diag):
    n = b.shape[0]
    bnorm = np.sqrt(np.dot(b, b))
    bmean = b.sum() / n
    _remove_mean(x)
    r = np.empty(n)
    q = np.empty(n)
    z = np.empty(n)
    p = np.empty(n)
    _matvec(indptr, indices, data, x, q)
    for i in range(n):
        r[i] = b[i] - bmean - q[i]
    _remove_mean(r)
    target = tol * bnorm
    it = 0
    pq = 1.0
    rnorm = np.sqrt(np.dot(r, r))
    while rnorm > target and it < max_iter:
        _precondition(kind, lp, li, lv, diag, r, z)
        rz = 0.0
        for i in range(n):
            p[i] = z[i]
            rz += r[i] * z[i]
        while it < max_iter:
            _matvec(indptr, indices, data, p, q)
            pq = np.dot(p, q)
            if not pq > 0.0:
                break
            alpha = rz / pq
            xs = 0.0
            rs = 0.0
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * q[i]
                xs += x[i]
                rs += r[i]
            xs /= n
            rs /= n
            rr = 0.0
            for i in range(n):
                x[i] -= xs
                r[i] -= rs
                rr += r[i] * r[i]
            it += 1
            rnorm = np.sqrt(rr)
            if rnorm <= target:
                break
            _precondition(kind, lp, li, lv, diag, r, z)
            rz_new = np.dot(r, z)
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                p[i] = z[i] + beta * p[i]
        # confirm with the true residual; restart from it if the recurrence drifted
        _matvec(indptr, indices, data, x, q)
        for i in range(n):
            r[i] = b[i] - q[i]
        rnorm = np.sqrt(np.dot(r, r))
        _remove_mean(r)
        if rnorm <= target:
            break
        if not pq > 0.0:
            break
    return x, it, rnorm


def projected_pcg(A, b, x0=None, tol=1e-10, max_iter=None, preconditioner=IC0):
    """CG for a symmetric semidefinite ``A`` whose kernel is the constants.

    Iterate, residual and preconditioned residual are projected onto the
    zero-mean subspace every iteration.

    Returns
    -------
    x : ndarray
    iterations : int
    residual : float
        Final ``||b - A x||_2``.
    preconditioner : str
        ``"ic0"``, or ``"jacobi"`` if the incomplete factorization broke down.
    """
    A = A.tocsr()
    A.sort_indices()
    n = A.shape[0]
    indptr = A.indptr.astype(np.int64)
    indices = A.indices.astype(np.int64)
    data = np.asarray(A.data, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if max_iter is None:
        max_iter = 10 * n
    if not np.any(b):
        return np.zeros(n), 0, 0.0, preconditioner
    diag = A.diagonal().astype(np.float64)
    kind = 0
    lp = np.zeros(1, dtype=np.int64)
    li = np.zeros(0, dtype=np.int64)
    lv = np.zeros(0)
    used = JACOBI
    if preconditioner == IC0:
        lp, li, lv, ok = ic0_factor(indptr, indices, data, n)
        if ok:
            kind, used = 1, IC0
    if np.any(diag <= 0.0) and kind == 0:
        diag = np.where(diag > 0.0, diag, 1.0)
    x, it, rnorm = _pcg(indptr, indices, data, b, x, float(tol), int(max_iter), kind, lp, li, lv, diag)
    return x, int(it), float(rnorm), used
