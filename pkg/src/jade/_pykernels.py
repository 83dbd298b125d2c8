"""Pure-Python kernels: exact 1D fused lasso and per-site fusion prox.

Reference implementations of the two hot kernels, used when the compiled
extension is unavailable (or forced via JADE_KERNELS=python). Identical
algorithms to the compiled versions; only the speed differs.
"""

import numpy as np

NAME = "python"


def dp_fused_lasso(y, lam):
    """Exact minimizer of 0.5*||b - y||^2 + lam * sum|b_{j+1} - b_j|.

    Forward/backward dynamic program over the piecewise-linear derivative
    of the running message function: the derivative is kept as a sorted list
    of breakpoints with affine increments, clipped to [-lam, lam] after each
    data point, and the solution is recovered by clipping backwards through
    the stored knots. O(n) in practice.
    """
    y = np.ascontiguousarray(y, dtype=float)
    n = y.size
    if n == 0:
        return y.copy()
    if n == 1 or lam == 0.0:
        return y.copy()

    x = np.empty(2 * n)
    a = np.empty(2 * n)
    b = np.empty(2 * n)
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)
    beta = np.empty(n)

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
        # walk in from the left until the derivative exceeds -lam
        alo = afirst
        blo = bfirst
        lo = left
        while lo <= right and alo * x[lo] + blo < -lam:
            alo += a[lo]
            blo += b[lo]
            lo += 1
        # walk in from the right until the derivative drops below lam
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

    # final coefficient sits at the zero of the last derivative
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
    return beta


def _pav_nondecreasing(z):
    """Pool-adjacent-violators projection onto nondecreasing vectors."""
    n = z.size
    vals = np.empty(n)
    sizes = np.empty(n, dtype=np.intp)
    top = -1
    for v in z:
        top += 1
        vals[top] = v
        sizes[top] = 1
        while top > 0 and vals[top - 1] > vals[top]:
            merged = vals[top - 1] * sizes[top - 1] + vals[top] * sizes[top]
            sizes[top - 1] += sizes[top]
            vals[top - 1] = merged / sizes[top - 1]
            top -= 1
    out = np.empty(n)
    i = 0
    for blk in range(top + 1):
        out[i : i + sizes[blk]] = vals[blk]
        i += sizes[blk]
    return out


def fusion_prox_vector(c, w):
    """Exact fusion prox for one site: pairwise l1 shrinkage of M values.

    Sorts the targets, shifts each by its signed rank, and projects onto the
    nondecreasing cone; the solution preserves the input ordering and the sum.
    """
    c = np.asarray(c, dtype=float)
    m = c.size
    if w == 0.0 or m == 1:
        return c.copy()
    order = np.argsort(c, kind="stable")
    shift = w * (2.0 * np.arange(m) + 1.0 - m)
    z = c[order] - shift
    fused = _pav_nondecreasing(z)
    out = np.empty(m)
    out[order] = fused
    return out


def fuse_columns(cmat, w):
    """Column-wise fusion prox of an (M, p) target array."""
    cmat = np.ascontiguousarray(cmat, dtype=float)
    m, p = cmat.shape
    if w == 0.0 or m == 1:
        return cmat.copy()
    if m == 2:
        mean = 0.5 * (cmat[0] + cmat[1])
        d = cmat[0] - cmat[1]
        dshrunk = np.sign(d) * np.maximum(np.abs(d) - 2.0 * w, 0.0)
        return np.vstack((mean + 0.5 * dshrunk, mean - 0.5 * dshrunk))
    out = np.empty_like(cmat)
    for j in range(p):
        out[:, j] = fusion_prox_vector(cmat[:, j], w)
    return out
