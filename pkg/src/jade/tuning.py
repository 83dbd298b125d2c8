"""Two-stage cross-validation: smoothing penalty first, fusion penalty second.

Stage one pools every group into a single weighted smoothing problem (the
infinite-fusion limit of the joint objective) and cross-validates the
smoothing penalty; stage two holds it fixed and cross-validates the fusion
penalty along a warm-started path. Folds take every lth site within a
group, staggered across groups so the same site is never held out of all
groups at once, and both stages select by the one-standard-error rule.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import admm
from .diffops import build_trend_operator
from .errors import ParameterError

POLY_TOL = 1e-5


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each (group, site) data point to one of l folds."""

    l: int
    fold_of: np.ndarray  # (M, p) integer fold ids in 0..l-1

    def heldout_mask(self, fold):
        return self.fold_of == fold

    @property
    def n_points(self):
        return self.fold_of.size


@dataclass
class CvCurve:
    """Cross-validation curve over one penalty grid, with the selected value.

    grid is stored in evaluation order; selection follows the
    one-standard-error rule over increasing regularization.
    """

    grid: np.ndarray
    mean_error: np.ndarray
    se: np.ndarray
    selected: float
    fold_errors: np.ndarray  # (l, len(grid)), NaN rows for skipped folds


def make_folds(p, n_groups, l, offset=-1):
    """Cyclic fold assignment with per-group stagger.

    Group m (0-based) assigns site j to fold (j + m*offset) mod l, so within
    each group every lth site shares a fold and the groups are shifted
    against each other; with M <= l no site has all its group points in one
    fold. offset=-1 reproduces the canonical staggering in which fold 0
    holds sites {0, l, ...} of group 0 and sites {1, l+1, ...} of group 1.
    """
    if l < 2:
        raise ParameterError(f"need at least 2 folds, got {l}")
    if l > p:
        raise ParameterError(f"cannot make {l} folds from {p} sites")
    j = np.arange(p)
    m = np.arange(n_groups)
    fold_of = (j[None, :] + offset * m[:, None]) % l
    return FoldPlan(l=l, fold_of=fold_of)


def one_se_select(errors, ses, grid):
    """Most-regularizing grid value with error within one SE of the minimum.

    grid must be ordered by increasing regularization; returns the largest
    (last) value whose mean error is at most min(errors) + se(argmin).
    """
    errors = np.asarray(errors, dtype=float)
    ses = np.asarray(ses, dtype=float)
    grid = np.asarray(grid)
    if errors.size == 0 or errors.shape != ses.shape or grid.shape != errors.shape:
        raise ParameterError("errors, ses, and grid must be equal-length and nonempty")
    best = int(np.argmin(errors))
    cutoff = errors[best] + ses[best]
    eligible = np.flatnonzero(errors <= cutoff)
    return grid[eligible[-1]]


def pooled_dataset(dataset, heldout=None):
    """Collapse all groups into one weighted series on the shared grid.

    Pointwise precision N_m a_mj^2 adds across groups (zero for held-out
    points), so the pooled fit term matches the sum of the per-group fit
    terms at a common profile up to a constant.
    """
    quad = dataset.nobs[:, None] * dataset.weights**2
    if heldout is not None:
        quad = np.where(heldout, 0.0, quad)
    combined = quad.sum(axis=0)
    with np.errstate(invalid="ignore"):
        ybar = np.where(combined > 0, (quad * dataset.ybar).sum(axis=0) / combined, 0.0)
    return admm.GroupedDataset(
        dataset.grid, ybar[None, :], np.sqrt(combined)[None, :], np.ones(1)
    )


def pooled_fit(dataset, params, heldout=None, init=None, **solve_kw):
    """Fit of the pooled series at the infinite-fusion limit of the joint
    objective: the smoothing penalty acts once per group, hence M * lam."""
    pooled = pooled_dataset(dataset, heldout)
    limit = replace(params, lam=params.lam * dataset.n_groups, gamma=0.0)
    return admm.solve_jade(pooled, limit, init=init, **solve_kw)


def _lambda_dual_start(dataset, trend, k):
    """Cheap starting point for the doubling search, a few octaves below an
    upper bound on the polynomial threshold.

    At the threshold the pooled fit is the precision-weighted polynomial
    fit, and stationarity puts the weighted residual in the row space of the
    penalty operator; the least-squares preimage's max-norm bounds the
    threshold from above (per-group penalty, hence the 1/M).
    """
    pooled = pooled_dataset(dataset)
    ypool = pooled.ybar[0]
    wpool = pooled.weights[0] ** 2
    x = dataset.grid.positions
    xs = (x - x.mean()) / max(np.ptp(x), 1.0)
    coeffs = np.polynomial.polynomial.polyfit(xs, ypool, k, w=np.sqrt(wpool))
    resid = wpool * (ypool - np.polynomial.polynomial.polyval(xs, coeffs))
    preimage, *_ = np.linalg.lstsq(trend.toarray().T, resid, rcond=None)
    bound = float(np.max(np.abs(preimage))) / dataset.n_groups
    return bound / 8.0


def lambda_max(dataset, params, **solve_kw):
    """Smallest tested smoothing penalty at which the pooled fit is a
    degree-k polynomial, found by doubling search.

    The probes are solved tightly enough that the residual floor sits well
    under the polynomial threshold, whatever tolerances the caller uses for
    the fits themselves.
    """
    quad = dataset.nobs[:, None] * dataset.weights**2
    scale = max(1.0, float(np.max(np.abs(quad * dataset.ybar))))
    floor = 1e-8 * scale
    cap = 1e8 * scale
    probe_kw = dict(solve_kw)
    probe_kw["tol_abs"] = min(1e-7, solve_kw.get("tol_abs", 1e-7))
    probe_kw["tol_rel"] = min(1e-6, solve_kw.get("tol_rel", 1e-6))
    trend = build_trend_operator(dataset.grid, params.k)

    state = {"fit": None}

    def is_poly(lam):
        state["fit"] = pooled_fit(
            dataset, replace(params, lam=lam), init=state["fit"], **probe_kw
        )
        theta = state["fit"].theta
        curvature = float(np.max(np.abs(trend.matvec(theta[0]))))
        return curvature <= POLY_TOL * max(1.0, float(np.max(np.abs(theta))))

    lam = min(max(floor, _lambda_dual_start(dataset, trend, params.k)), cap)
    if is_poly(lam):
        # the dual bound overshot: halve down to the smallest polynomial value
        while lam / 2.0 >= floor and is_poly(lam / 2.0):
            lam /= 2.0
        return lam
    while lam < cap:
        lam = min(lam * 2.0, cap)
        if is_poly(lam):
            return lam
    warnings.warn(
        f"pooled fit never reached a polynomial below cap {cap:g}",
        RuntimeWarning,
        stacklevel=2,
    )
    return lam


def default_lambda_grid(dataset, params, count=30, span=1e4, **solve_kw):
    """count log-spaced smoothing penalties over [lambda_max/span, lambda_max],
    in increasing (more regularizing) order."""
    top = lambda_max(dataset, params, **solve_kw)
    return np.geomspace(top / span, top, count)


def _heldout_error(dataset, theta, heldout):
    """Mean precision-weighted squared error over the held-out points."""
    quad = dataset.nobs[:, None] * dataset.weights**2
    err = quad * (dataset.ybar - theta) ** 2
    return float(err[heldout].sum() / heldout.sum())


def cv_lambda(dataset, params, lam_grid=None, folds=None, **solve_kw):
    """Stage one: cross-validate the smoothing penalty on the pooled problem.

    For each fold the held-out points get zero weight in the pooling; the
    pooled profile is fit along the grid with warm starts and scored by the
    precision-weighted squared error at the held-out points.
    """
    if folds is None:
        folds = make_folds(dataset.p, dataset.n_groups, 5)
    if lam_grid is None:
        lam_grid = default_lambda_grid(dataset, params, **solve_kw)
    lam_grid = np.asarray(lam_grid, dtype=float)
    if lam_grid.size == 0:
        raise ParameterError("empty smoothing-penalty grid")

    fold_errors = np.full((folds.l, lam_grid.size), np.nan)
    for fold in range(folds.l):
        held = folds.heldout_mask(fold)
        quad = dataset.nobs[:, None] * dataset.weights**2
        usable = np.count_nonzero(np.where(held, 0.0, quad).sum(axis=0) > 0)
        if usable < params.k + 2:
            warnings.warn(
                f"fold {fold} leaves only {usable} usable sites; skipping",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        fit = None
        for i, lam in enumerate(lam_grid):
            fit = pooled_fit(
                dataset, replace(params, lam=float(lam)), heldout=held,
                init=fit, **solve_kw,
            )
            theta = np.broadcast_to(fit.theta[0], dataset.ybar.shape)
            fold_errors[fold, i] = _heldout_error(dataset, theta, held)

    return _curve_from_folds(lam_grid, fold_errors, increasing_regularization=True)


def cv_gamma(dataset, params, gamma_values, folds=None, **solve_kw):
    """Stage two: cross-validate the fusion penalty at the selected smoothing.

    Each fold zero-weights its held-out points and solves the whole fusion
    path with warm starts; held-out errors are aligned by grid index across
    folds and the one-SE rule is applied over increasing gamma.
    """
    if folds is None:
        folds = make_folds(dataset.p, dataset.n_groups, 5)
    gamma_values = np.asarray(gamma_values, dtype=float)
    if gamma_values.size == 0:
        raise ParameterError("empty fusion-penalty grid")

    fold_errors = np.full((folds.l, gamma_values.size), np.nan)
    for fold in range(folds.l):
        held = folds.heldout_mask(fold)
        weights = np.where(held, 0.0, dataset.weights)
        usable = np.count_nonzero(weights > 0, axis=1)
        if np.any(usable < params.k + 2):
            warnings.warn(
                f"fold {fold} leaves a group with under k+2 sites; skipping",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        sub = admm.GroupedDataset(dataset.grid, dataset.ybar, weights, dataset.nobs)
        fits = admm.solve_gamma_path(sub, params, gamma_values, **solve_kw)
        for i, fit in enumerate(fits):
            if fit.error is None:
                fold_errors[fold, i] = _heldout_error(dataset, fit.theta, held)

    increasing = bool(gamma_values[-1] >= gamma_values[0])
    return _curve_from_folds(
        gamma_values, fold_errors, increasing_regularization=increasing
    )


def _curve_from_folds(grid, fold_errors, increasing_regularization):
    used = ~np.all(np.isnan(fold_errors), axis=1)
    if not np.any(used):
        raise ParameterError("every fold was skipped; cannot cross-validate")
    sub = fold_errors[used]
    mean = np.nanmean(sub, axis=0)
    nfolds = np.sum(~np.isnan(sub), axis=0)
    sd = np.nanstd(sub, axis=0, ddof=1) if sub.shape[0] > 1 else np.zeros_like(mean)
    se = np.where(nfolds > 1, sd / np.sqrt(np.maximum(nfolds, 1)), 0.0)

    if increasing_regularization:
        selected = one_se_select(mean, se, grid)
    else:
        selected = one_se_select(mean[::-1], se[::-1], grid[::-1])
    return CvCurve(
        grid=grid,
        mean_error=mean,
        se=se,
        selected=float(selected),
        fold_errors=fold_errors,
    )
