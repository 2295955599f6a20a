# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``co2seq._kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def banded_ldl_factor(const double[:, ::1] lower, double rel_tol):
    """Band LDL^T without pivoting.

    ``lower[k, j]`` holds A[j + k, j]. Returns ``(fac, bad)`` where ``fac[0]``
    is D, ``fac[k, j]`` is L[j + k, j] and ``bad`` is -1 or the index of the
    first pivot below ``rel_tol * max|diag|``.
    """
    cdef Py_ssize_t nb = lower.shape[0], n = lower.shape[1]
    cdef Py_ssize_t b = nb - 1
    cdef double[:, ::1] fac = np.zeros((nb, n))
    cdef Py_ssize_t i, j, k, kk
    cdef double s, scale = 0.0, dj
    for j in range(n):
        if fabs(lower[0, j]) > scale:
            scale = fabs(lower[0, j])
    for j in range(n):
        s = lower[0, j]
        for k in range(max(0, j - b), j):
            s -= fac[j - k, k] * fac[j - k, k] * fac[0, k]
        if fabs(s) <= rel_tol * scale or s != s:
            return np.asarray(fac), j
        fac[0, j] = s
        dj = s
        for i in range(j + 1, min(n, j + b + 1)):
            s = lower[i - j, j]
            for kk in range(max(0, i - b), j):
                s -= fac[i - kk, kk] * fac[j - kk, kk] * fac[0, kk]
            fac[i - j, j] = s / dj
    return np.asarray(fac), -1


def banded_ldl_solve(const double[:, ::1] fac, const double[:, ::1] rhs):
    """Solve with a factor from :func:`banded_ldl_factor`; rhs is (n, m)."""
    cdef Py_ssize_t nb = fac.shape[0], n = fac.shape[1], m = rhs.shape[1]
    cdef Py_ssize_t b = nb - 1
    cdef double[:, ::1] x = np.array(rhs, copy=True)
    cdef Py_ssize_t i, k, c
    cdef double lik
    for i in range(n):
        for k in range(max(0, i - b), i):
            lik = fac[i - k, k]
            for c in range(m):
                x[i, c] -= lik * x[k, c]
    for i in range(n):
        for c in range(m):
            x[i, c] /= fac[0, i]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, min(n, i + b + 1)):
            lik = fac[k - i, i]
            for c in range(m):
                x[i, c] -= lik * x[k, c]
    return np.asarray(x)


cdef Py_ssize_t _find_span(const double[::1] knots, Py_ssize_t degree, Py_ssize_t n_basis, double x) nogil:
    cdef Py_ssize_t lo, hi, mid
    if x >= knots[n_basis]:
        return n_basis - 1
    if x <= knots[degree]:
        return degree
    lo = degree
    hi = n_basis
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def basis_funs_ders(const double[::1] knots, int degree, const double[::1] xs):
    """Nonzero B-spline values and first derivatives at each point.

    Returns ``(spans, vals, ders)``; row ``q`` of ``vals`` holds
    B_{span-degree .. span}(xs[q]).
    """
    cdef Py_ssize_t p = degree
    cdef Py_ssize_t n_basis = knots.shape[0] - p - 1
    cdef Py_ssize_t npts = xs.shape[0]
    cdef cnp.int64_t[::1] spans = np.empty(npts, dtype=np.int64)
    cdef double[:, ::1] vals = np.zeros((npts, p + 1))
    cdef double[:, ::1] ders = np.zeros((npts, p + 1))
    cdef double[::1] left = np.empty(p + 1)
    cdef double[::1] right = np.empty(p + 1)
    cdef double[::1] prev = np.empty(p + 1)
    cdef double[::1] cur = np.empty(p + 1)
    cdef Py_ssize_t q, s, r, jj
    cdef double x, saved, temp, dl, dr
    for q in range(npts):
        x = xs[q]
        s = _find_span(knots, p, n_basis, x)
        spans[q] = s
        cur[0] = 1.0
        for jj in range(1, p + 1):
            for r in range(jj):
                prev[r] = cur[r]
            left[jj] = x - knots[s + 1 - jj]
            right[jj] = knots[s + jj] - x
            saved = 0.0
            for r in range(jj):
                temp = cur[r] / (right[r + 1] + left[jj - r])
                cur[r] = saved + right[r + 1] * temp
                saved = left[jj - r] * temp
            cur[jj] = saved
        for r in range(p + 1):
            vals[q, r] = cur[r]
        if p == 0:
            continue
        # prev holds the degree p-1 values B_{s-p+1 .. s}
        for r in range(p + 1):
            dl = 0.0
            dr = 0.0
            if r >= 1:
                dl = prev[r - 1] / (knots[s - p + r + p] - knots[s - p + r])
            if r <= p - 1:
                dr = prev[r] / (knots[s - p + r + p + 1] - knots[s - p + r + 1])
            ders[q, r] = p * (dl - dr)
    return np.asarray(spans), np.asarray(vals), np.asarray(ders)


def stencil_apply(const double[:, ::1] u, const double[:, ::1] alpha):
    """Weighted five-point stencil on interior nodes of an (N+1)^2 grid."""
    cdef Py_ssize_t n1 = u.shape[0]
    cdef Py_ssize_t m = n1 - 2
    cdef double[:, ::1] out = np.empty((m, m))
    cdef Py_ssize_t k, l
    cdef double c
    for k in range(1, n1 - 1):
        for l in range(1, n1 - 1):
            c = u[k, l]
            out[k - 1, l - 1] = (alpha[k - 1, l] * (c - u[k - 1, l])
                                 + alpha[k, l - 1] * (c - u[k, l - 1])
                                 + alpha[k, l] * (c - u[k + 1, l])
                                 + alpha[k, l] * (c - u[k, l + 1]))
    return np.asarray(out)


def stencil_adjoint(const double[:, ::1] w, const double[:, ::1] alpha):
    """Transpose of :func:`stencil_apply`; maps interior weights to the full grid."""
    cdef Py_ssize_t m = w.shape[0]
    cdef Py_ssize_t n1 = m + 2
    cdef double[:, ::1] out = np.zeros((n1, n1))
    cdef Py_ssize_t k, l
    cdef double a, aw, as_, wk
    for k in range(1, n1 - 1):
        for l in range(1, n1 - 1):
            wk = w[k - 1, l - 1]
            aw = alpha[k - 1, l]
            as_ = alpha[k, l - 1]
            a = alpha[k, l]
            out[k, l] += wk * (aw + as_ + 2.0 * a)
            out[k - 1, l] -= wk * aw
            out[k, l - 1] -= wk * as_
            out[k + 1, l] -= wk * a
            out[k, l + 1] -= wk * a
    return np.asarray(out)
