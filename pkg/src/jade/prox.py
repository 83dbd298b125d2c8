"""Exact solvers for the three inner subproblems of the solver.

All three are pure functions and safe to call concurrently: the 1D fused
lasso (dynamic programming), the two-value fusion prox (closed form), and
the M-value fusion prox (rank-shift + isotonic projection, exact for the
separable pairwise l1 penalty).
"""

import numpy as np

from . import backends
from .errors import DataError, ParameterError, UnderdeterminedError


def fused_lasso_1d(targets, penalty):
    """Exact minimizer of 0.5*||b - targets||^2 + penalty * sum |b_{j+1} - b_j|.

    Parameters
    ----------
    targets : array of length q
    penalty : nonnegative float

    Returns
    -------
    array of length q, the unique minimizer.
    """
    targets = np.ascontiguousarray(targets, dtype=float)
    if penalty < 0:
        raise ParameterError(f"fused-lasso penalty must be >= 0, got {penalty}")
    if targets.size < 1:
        raise ParameterError("fused lasso needs at least one target")
    if not np.all(np.isfinite(targets)):
        raise DataError("fused-lasso targets contain NaN or inf")
    return backends.dp_fused_lasso(targets, float(penalty))


def fusion_prox_pair(c1, c2, w):
    """Minimize 0.5*(b1-c1)^2 + 0.5*(b2-c2)^2 + w*|b1-b2|, in closed form.

    The mean is preserved and the gap shrinks by 2w, collapsing to full
    fusion once w >= |c1-c2|/2.
    """
    if w < 0:
        raise ParameterError(f"fusion weight must be >= 0, got {w}")
    mean = 0.5 * (c1 + c2)
    d = c1 - c2
    dnew = np.sign(d) * max(abs(d) - 2.0 * w, 0.0)
    return (mean + 0.5 * dnew, mean - 0.5 * dnew)


def fusion_prox_multi(c, w):
    """Minimize sum_m 0.5*(b_m-c_m)^2 + w * sum_{m<m'} |b_m - b_m'| exactly.

    Because the solution preserves the ordering of c, the pairwise penalty is
    linear in the sorted coordinates, so the minimizer is the isotonic
    projection of the rank-shifted targets c_(m) - w*(2m - M - 1). Preserves
    the sum of c; ties in c come out fused.
    """
    c = np.ascontiguousarray(c, dtype=float)
    if c.ndim != 1 or c.size < 2:
        raise ParameterError("fusion prox needs a 1-d vector with M >= 2")
    if w < 0:
        raise ParameterError(f"fusion weight must be >= 0, got {w}")
    if not np.all(np.isfinite(c)):
        raise DataError("fusion targets contain NaN or inf")
    return backends.fusion_prox_vector(c, float(w))


def trend_filter(grid, targets, weights, lam, k=2):
    """Weighted trend filtering on a grid: smooth fit with order-k penalty.

    Solves the single-group problem (fusion term absent) for the weighted
    squared loss 0.5 * sum_j a_j^2 (y_j - theta_j)^2 plus lam times the l1
    norm of the (k+1)th discrete derivative; weights are on the
    inverse-standard-deviation scale and zeros mark missing sites.
    """
    from . import admm

    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if lam < 0:
        raise ParameterError(f"smoothing penalty must be >= 0, got {lam}")
    npos = int(np.count_nonzero(weights > 0))
    if npos == 0:
        raise UnderdeterminedError("trend filter needs at least one observed site")
    if npos < k + 2:
        raise UnderdeterminedError(
            f"trend filter of order {k} needs >= {k + 2} observed sites, got {npos}"
        )
    dataset = admm.GroupedDataset(
        grid, targets[None, :], weights[None, :], np.ones(1)
    )
    params = admm.PenaltyParams(lam=lam, gamma=0.0, k=k)
    fit = admm.solve_jade(dataset, params, tol_abs=1e-7, tol_rel=1e-6)
    return fit.theta[0]
