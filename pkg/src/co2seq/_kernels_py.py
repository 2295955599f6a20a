"""Pure NumPy fallback for the compiled kernels in ``_kernels.pyx``.

Every function here has the same signature and return values as its compiled
twin; ``co2seq.kernels`` picks one of the two at import time.
"""
import numpy as np


def banded_ldl_factor(lower, rel_tol):
    lower = np.asarray(lower, dtype=float)
    nb, n = lower.shape
    b = nb - 1
    fac = np.zeros((nb, n))
    scale = np.max(np.abs(lower[0])) if n else 0.0
    for j in range(n):
        ks = range(max(0, j - b), j)
        s = lower[0, j] - sum(fac[j - k, k] ** 2 * fac[0, k] for k in ks)
        if abs(s) <= rel_tol * scale or s != s:
            return fac, j
        fac[0, j] = s
        for i in range(j + 1, min(n, j + b + 1)):
            t = lower[i - j, j]
            for k in range(max(0, i - b), j):
                t -= fac[i - k, k] * fac[j - k, k] * fac[0, k]
            fac[i - j, j] = t / s
    return fac, -1


def banded_ldl_solve(fac, rhs):
    fac = np.asarray(fac, dtype=float)
    nb, n = fac.shape
    b = nb - 1
    x = np.array(rhs, dtype=float, copy=True)
    for i in range(n):
        for k in range(max(0, i - b), i):
            x[i] -= fac[i - k, k] * x[k]
    x /= fac[0][:, None]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, min(n, i + b + 1)):
            x[i] -= fac[k - i, i] * x[k]
    return x


def _find_spans(knots, degree, xs):
    n_basis = len(knots) - degree - 1
    spans = np.searchsorted(knots, xs, side="right") - 1
    return np.clip(spans, degree, n_basis - 1).astype(np.int64)


def basis_funs_ders(knots, degree, xs):
    knots = np.asarray(knots, dtype=float)
    xs = np.asarray(xs, dtype=float)
    p = int(degree)
    spans = _find_spans(knots, p, xs)
    npts = len(xs)
    cur = np.zeros((npts, p + 1))
    cur[:, 0] = 1.0
    prev = cur.copy()
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for jj in range(1, p + 1):
        prev = cur.copy()
        left[:, jj] = xs - knots[spans + 1 - jj]
        right[:, jj] = knots[spans + jj] - xs
        saved = np.zeros(npts)
        for r in range(jj):
            temp = cur[:, r] / (right[:, r + 1] + left[:, jj - r])
            cur[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, jj - r] * temp
        cur[:, jj] = saved
    ders = np.zeros((npts, p + 1))
    if p > 0:
        for r in range(p + 1):
            i = spans - p + r
            if r >= 1:
                ders[:, r] += prev[:, r - 1] / (knots[i + p] - knots[i])
            if r <= p - 1:
                ders[:, r] -= prev[:, r] / (knots[i + p + 1] - knots[i + 1])
        ders *= p
    return spans, cur, ders


def stencil_apply(u, alpha):
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    c = u[1:-1, 1:-1]
    return (alpha[:-2, 1:-1] * (c - u[:-2, 1:-1])
            + alpha[1:-1, :-2] * (c - u[1:-1, :-2])
            + alpha[1:-1, 1:-1] * (c - u[2:, 1:-1])
            + alpha[1:-1, 1:-1] * (c - u[1:-1, 2:]))


def stencil_adjoint(w, alpha):
    w = np.asarray(w, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    m = w.shape[0]
    out = np.zeros((m + 2, m + 2))
    aw = alpha[:-2, 1:-1]
    as_ = alpha[1:-1, :-2]
    a = alpha[1:-1, 1:-1]
    out[1:-1, 1:-1] += w * (aw + as_ + 2.0 * a)
    out[:-2, 1:-1] -= w * aw
    out[1:-1, :-2] -= w * as_
    out[2:, 1:-1] -= w * a
    out[1:-1, 2:] -= w * a
    return out
