# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: exact 1D fused lasso and per-site fusion prox.

Same algorithms as the pure-Python fallback module; see _pykernels for the
derivations. These are the hot inner loops of the solver.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


cdef void _dp_core(double[::1] y, double lam, double[::1] beta,
                   double[::1] x, double[::1] a, double[::1] b,
                   double[::1] tm, double[::1] tp) noexcept nogil:
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t left, right, lo, hi, kk
    cdef double afirst, bfirst, alast, blast, alo, blo, ahi, bhi

    tm[0] = y[0] - lam
    tp[0] = y[0] + lam
    left = n - 1
    right = n
    x[left] = tm[0]
    x[right] = tp[0]
    a[left] = 1.0
    b[left] = -y[0] + lam
    a[right] = -1.0
    b[right] = y[0] + lam
    afirst = 1.0
    bfirst = -lam - y[1]
    alast = -1.0
    blast = -lam + y[1]

    for kk in range(1, n - 1):
        alo = afirst
        blo = bfirst
        lo = left
        while lo <= right and alo * x[lo] + blo < -lam:
            alo += a[lo]
            blo += b[lo]
            lo += 1
        ahi = alast
        bhi = blast
        hi = right
        while hi >= lo and -(ahi * x[hi] + bhi) > lam:
            ahi += a[hi]
            bhi += b[hi]
            hi -= 1

        tm[kk] = (-lam - blo) / alo
        left = lo - 1
        x[left] = tm[kk]
        tp[kk] = (lam + bhi) / (-ahi)
        right = hi + 1
        x[right] = tp[kk]
        a[left] = alo
        b[left] = blo + lam
        a[right] = ahi
        b[right] = bhi + lam
        afirst = 1.0
        bfirst = -lam - y[kk + 1]
        alast = -1.0
        blast = -lam + y[kk + 1]

    alo = afirst
    blo = bfirst
    lo = left
    while lo <= right and alo * x[lo] + blo < 0.0:
        alo += a[lo]
        blo += b[lo]
        lo += 1
    beta[n - 1] = -blo / alo
    for kk in range(n - 2, -1, -1):
        if beta[kk + 1] > tp[kk]:
            beta[kk] = tp[kk]
        elif beta[kk + 1] < tm[kk]:
            beta[kk] = tm[kk]
        else:
            beta[kk] = beta[kk + 1]


def dp_fused_lasso(y, double lam):
    """Exact minimizer of 0.5*||b - y||^2 + lam * sum|b_{j+1} - b_j|."""
    cdef cnp.ndarray[double, ndim=1] yarr = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yarr.shape[0]
    if n <= 1 or lam == 0.0:
        return yarr.copy()
    cdef cnp.ndarray[double, ndim=1] beta = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] x = np.empty(2 * n)
    cdef cnp.ndarray[double, ndim=1] a = np.empty(2 * n)
    cdef cnp.ndarray[double, ndim=1] b = np.empty(2 * n)
    cdef cnp.ndarray[double, ndim=1] tm = np.empty(n - 1)
    cdef cnp.ndarray[double, ndim=1] tp = np.empty(n - 1)
    _dp_core(yarr, lam, beta, x, a, b, tm, tp)
    return beta


cdef void _fuse_one(double[::1] col, double w, double[::1] out,
                    Py_ssize_t[::1] order, double[::1] vals,
                    double[::1] sizes) noexcept nogil:
    cdef Py_ssize_t m = col.shape[0]
    cdef Py_ssize_t i, j, top, blk
    cdef double v, merged

    # stable insertion sort of the indices by target value
    for i in range(m):
        order[i] = i
    for i in range(1, m):
        j = i
        while j > 0 and col[order[j - 1]] > col[order[j]]:
            order[j - 1], order[j] = order[j], order[j - 1]
            j -= 1

    # rank-shifted targets projected onto the nondecreasing cone (PAV)
    top = -1
    for i in range(m):
        v = col[order[i]] - w * (2.0 * i + 1.0 - m)
        top += 1
        vals[top] = v
        sizes[top] = 1.0
        while top > 0 and vals[top - 1] > vals[top]:
            merged = vals[top - 1] * sizes[top - 1] + vals[top] * sizes[top]
            sizes[top - 1] += sizes[top]
            vals[top - 1] = merged / sizes[top - 1]
            top -= 1

    i = 0
    for blk in range(top + 1):
        for j in range(<Py_ssize_t> sizes[blk]):
            out[order[i]] = vals[blk]
            i += 1


def fusion_prox_vector(c, double w):
    """Exact fusion prox for one site: pairwise l1 shrinkage of M values."""
    cdef cnp.ndarray[double, ndim=1] carr = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t m = carr.shape[0]
    if w == 0.0 or m == 1:
        return carr.copy()
    cdef cnp.ndarray[double, ndim=1] out = np.empty(m)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] order = np.empty(m, dtype=np.intp)
    cdef cnp.ndarray[double, ndim=1] vals = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] sizes = np.empty(m)
    _fuse_one(carr, w, out, order, vals, sizes)
    return out


def fuse_columns(cmat, double w):
    """Column-wise fusion prox of an (M, p) target array."""
    cdef cnp.ndarray[double, ndim=2] arr = np.ascontiguousarray(cmat, dtype=np.float64)
    cdef Py_ssize_t m = arr.shape[0]
    cdef Py_ssize_t p = arr.shape[1]
    if w == 0.0 or m == 1:
        return arr.copy()
    cdef cnp.ndarray[double, ndim=2] out = np.empty((m, p))
    cdef double[:, ::1] av = arr
    cdef double[:, ::1] ov = out
    cdef double[::1] cv = np.empty(m)
    cdef double[::1] rv = np.empty(m)
    cdef Py_ssize_t[::1] order = np.empty(m, dtype=np.intp)
    cdef double[::1] vals = np.empty(m)
    cdef double[::1] sizes = np.empty(m)
    cdef Py_ssize_t i, j
    with nogil:
        for j in range(p):
            for i in range(m):
                cv[i] = av[i, j]
            _fuse_one(cv, w, rv, order, vals, sizes)
            for i in range(m):
                ov[i, j] = rv[i]
    return out
