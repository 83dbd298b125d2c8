"""Simulation bench: data generators, per-site test baselines, and ROC scoring.

Two smooth group mean curves differing on two windows drive three noise
regimes (moving-average correlated noise, per-observation random shifts,
and binomial counts with variable read depth). The joint solver is scored
by sweeping its fusion path, per-site t-tests by sweeping a threshold, and
both reduce to (FPR, TPR) points against the construction's truth mask.
Replicates own independent random streams and may run concurrently.
"""

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import admm, tuning
from .admm import GroupedDataset, PenaltyParams
from .errors import DataError, ParameterError, UndefinedRateError

REGIMES = ("ar", "re", "binomial")

# window placement on the canonical 300-site layout, scaled to other p
WINDOW_FRACTIONS = ((55 / 300, 110 / 300), (190 / 300, 230 / 300))
SEPARATIONS = (1.0, 0.6)


@dataclass
class MeanCurvePair:
    """Two mean curves on a grid, equal except on the truth windows."""

    positions: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    mask: np.ndarray
    windows: tuple

    def curves(self):
        return np.vstack((self.f1, self.f2))

    def rescaled(self):
        """Both curves mapped by one affine transform onto [0, 1]."""
        lo = min(self.f1.min(), self.f2.min())
        hi = max(self.f1.max(), self.f2.max())
        span = hi - lo
        return MeanCurvePair(
            positions=self.positions,
            f1=(self.f1 - lo) / span,
            f2=(self.f2 - lo) / span,
            mask=self.mask.copy(),
            windows=self.windows,
        )


@dataclass
class ScoreTrack:
    """Per-site evidence scores (or per-path detection masks) plus truth."""

    scores: np.ndarray
    truth: np.ndarray


@dataclass
class SimConfig:
    """One simulation setting; seed plus replicate index define the stream."""

    regime: str
    sigma: float = 1.0
    rho: float = 0.0
    sigma_re: float = 0.0
    n_per_group: int = 10
    p: int = 300
    spacing: float = 1.0
    read_depth_mean: float = 9.0
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ParameterError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "re" and abs(self.sigma**2 + self.sigma_re**2 - 5.0) > 1e-9:
            raise ParameterError(
                "random-effects regime fixes sigma^2 + sigma_re^2 = 5; "
                f"got {self.sigma**2 + self.sigma_re**2:.6f}"
            )
        if self.p < 100:
            raise ParameterError("simulations need p >= 100")

    @classmethod
    def random_effects(cls, fraction, **kw):
        """RE setting from the fraction of variance due to random effects."""
        sigma_re = float(np.sqrt(5.0 * fraction))
        sigma = float(np.sqrt(5.0 * (1.0 - fraction)))
        return cls(regime="re", sigma=sigma, sigma_re=sigma_re, **kw)

    def label(self):
        if self.regime == "ar":
            return f"ar_sigma{self.sigma:g}_rho{self.rho:g}"
        if self.regime == "re":
            frac = self.sigma_re**2 / (self.sigma**2 + self.sigma_re**2)
            return f"re_frac{frac:g}"
        return f"binom_sigmare{self.sigma_re:g}"


def gen_mean_curves(p=300, spacing=1.0, separations=SEPARATIONS):
    """The two mean profiles: a smooth baseline and the same curve plus two
    strictly windowed bumps with the given peak separations.

    The bumps are half-sine-squared and exactly zero off their windows, so
    the truth mask is the constructed window set.
    """
    if p < 100:
        raise ParameterError("need p >= 100 sites")
    positions = spacing * np.arange(p, dtype=float)
    x = np.arange(p, dtype=float) / (p - 1)
    f1 = (
        1.0
        + 0.45 * np.sin(2.0 * np.pi * 1.1 * x + 0.4)
        + 0.7 * np.exp(-(((x - 0.62) / 0.10) ** 2))
    )

    f2 = f1.copy()
    mask = np.zeros(p, dtype=bool)
    windows = []
    for (frac_lo, frac_hi), amp in zip(WINDOW_FRACTIONS, separations):
        lo = int(round(frac_lo * p))
        hi = int(round(frac_hi * p))
        windows.append((lo, hi))
        mask[lo : hi + 1] = True
        a, b = positions[lo - 1], positions[hi + 1]
        inside = slice(lo, hi + 1)
        f2[inside] += amp * np.sin(
            np.pi * (positions[inside] - a) / (b - a)
        ) ** 2
    return MeanCurvePair(
        positions=positions, f1=f1, f2=f2, mask=mask, windows=tuple(windows)
    )


def simulate_ar(config, curves, rng=None):
    """Correlated-noise observations: eps_j = z_j + rho * z_{j-1}, z iid."""
    if config.regime != "ar":
        raise ParameterError(f"config regime is {config.regime!r}, not 'ar'")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n, p = config.n_per_group, config.p
    z = rng.normal(0.0, config.sigma, size=(2, n, p))
    eps = z.copy()
    eps[..., 1:] += config.rho * z[..., :-1]
    return curves.curves()[:, None, :] + eps


def simulate_re(config, curves, rng=None):
    """Random-effects observations: one mean shift per observation plus iid noise."""
    if config.regime != "re":
        raise ParameterError(f"config regime is {config.regime!r}, not 're'")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n, p = config.n_per_group, config.p
    b = rng.normal(0.0, config.sigma_re, size=(2, n, 1))
    z = rng.normal(0.0, config.sigma, size=(2, n, p))
    return curves.curves()[:, None, :] + b + z


def simulate_binomial(config, curves, rng=None):
    """Counts and reads per observation from [0,1]-scaled mean curves.

    Success probabilities are the curve plus a per-observation shift,
    clipped to [0, 1]; read depths are 1 + Poisson so no site has zero reads.
    """
    if config.regime != "binomial":
        raise ParameterError(f"config regime is {config.regime!r}, not 'binomial'")
    f = curves.curves()
    if f.min() < 0 or f.max() > 1:
        raise DataError("binomial simulation needs curves rescaled to [0, 1]")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n, p = config.n_per_group, config.p
    b = rng.normal(0.0, config.sigma_re, size=(2, n, 1))
    prob = np.clip(f[:, None, :] + b, 0.0, 1.0)
    reads = 1 + rng.poisson(config.read_depth_mean, size=(2, n, p))
    counts = rng.binomial(reads, prob)
    return counts, reads


def binomial_weights(counts, reads):
    """Pseudo-count standard-deviation estimates and fit weights.

    The smoothed proportion (c + 0.5) / (n + 1) keeps the variance estimate
    away from zero; weights are inverse standard deviations, zero where no
    reads were observed.
    """
    counts = np.asarray(counts, dtype=float)
    reads = np.asarray(reads, dtype=float)
    if np.any(counts < 0) or np.any(reads < 0):
        raise DataError("counts and reads must be nonnegative")
    if np.any(counts > reads):
        raise DataError("counts exceed reads")
    star = (counts + 0.5) / (reads + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(reads > 0, star * (1.0 - star) / reads, np.inf)
    sd = np.sqrt(var)
    weights = np.where(reads > 0, 1.0 / sd, 0.0)
    return sd, weights


def t_test_scores(observations, truth=None, smoother=None):
    """Per-site two-sample Welch |t| between two groups of observations.

    observations is a pair (or (2, n, p) array) of per-group observation
    matrices; smoother, when given, is applied to each observation row
    before testing. Sites with zero variance in both groups score +inf when
    the means differ and 0 when they agree.
    """
    a, b = np.asarray(observations[0], float), np.asarray(observations[1], float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ParameterError("need two (n, p) observation matrices on one grid")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ParameterError("need at least two observations per group")
    if smoother is not None:
        a = smoother(a)
        b = smoother(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        res = stats.ttest_ind(a, b, axis=0, equal_var=False)
        t = np.abs(res.statistic)
    degenerate = ~np.isfinite(t)
    if np.any(degenerate):
        gap = np.abs(a.mean(axis=0) - b.mean(axis=0))
        t = np.where(degenerate & (gap > 0), np.inf, np.where(degenerate, 0.0, t))
    return ScoreTrack(scores=t, truth=truth)


def t_test_pvalues(observations):
    """Welch two-sample p-values per site (for threshold-free FDR cuts)."""
    a, b = np.asarray(observations[0], float), np.asarray(observations[1], float)
    with np.errstate(divide="ignore", invalid="ignore"):
        res = stats.ttest_ind(a, b, axis=0, equal_var=False)
        pvals = res.pvalue
    gap = np.abs(a.mean(axis=0) - b.mean(axis=0))
    pvals = np.where(np.isfinite(pvals), pvals, np.where(gap > 0, 0.0, 1.0))
    return pvals


def make_trend_smoother(positions, k=2, n_penalties=6):
    """Per-observation smoother: trend filter with a GCV-chosen penalty.

    Stand-in for spline and local-likelihood smoothing of individual
    observations; degrees of freedom are counted as active knots plus k+1.
    """
    from .diffops import SiteGrid, build_trend_operator

    grid = SiteGrid(positions)
    trend = build_trend_operator(grid, k)
    p = grid.p

    def smooth(obs):
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        out = np.empty_like(obs)
        weights = np.ones(p)
        for i, row in enumerate(obs):
            scale = max(1.0, float(np.max(np.abs(row))))
            lams = np.geomspace(1e-2 * scale, 1e2 * scale, n_penalties)
            best = (np.inf, row)
            fit = None
            for lam in lams:
                dataset = GroupedDataset(grid, row[None], weights[None], np.ones(1))
                fit = admm.solve_jade(
                    dataset, PenaltyParams(lam=float(lam), gamma=0.0, k=k), init=fit
                )
                theta = fit.theta[0]
                knots = int(np.sum(np.abs(trend.matvec(theta)) > 1e-6 * scale))
                df = min(knots + k + 1, p - 1)
                gcv = np.mean((row - theta) ** 2) / (1.0 - df / p) ** 2
                if gcv < best[0]:
                    best = (gcv, theta)
            out[i] = best[1]
        return out

    return smooth


# ---------------------------------------------------------------------------
# ROC machinery
# ---------------------------------------------------------------------------


def _rates(pred, truth):
    n_pos = int(truth.sum())
    n_neg = int((~truth).sum())
    tpr = float((pred & truth).sum()) / n_pos
    fpr = float((pred & ~truth).sum()) / n_neg
    return fpr, tpr


def roc_curve(scores, truth=None):
    """(FPR, TPR) points sorted by FPR.

    A 1-d score track is swept over every threshold (strict exceedance),
    with the trivial (0,0) and (1,1) endpoints included; a 2-d boolean array
    is treated as one detection mask per row (one point per fusion-path
    value), reported as-is.
    """
    if isinstance(scores, ScoreTrack):
        truth = scores.truth if truth is None else truth
        scores = scores.scores
    if truth is None:
        raise ParameterError("roc_curve needs a truth mask")
    truth = np.asarray(truth, dtype=bool)
    if truth.all() or not truth.any():
        raise UndefinedRateError("truth mask must contain positives and negatives")

    scores = np.asarray(scores)
    if scores.ndim == 1:
        points = [(0.0, 0.0)]
        for tau in np.unique(scores)[::-1]:
            points.append(_rates(scores > tau, truth))
        points.append((1.0, 1.0))
    elif scores.ndim == 2:
        points = [_rates(np.asarray(row, dtype=bool), truth) for row in scores]
    else:
        raise ParameterError("scores must be a vector or a stack of masks")
    points = np.array(sorted(set(points)))
    return points


def interp_tpr(points, fpr_grid):
    """TPR at fixed FPR values, interpolated along the monotone envelope.

    Points are sorted by FPR and the running-max TPR envelope anchored at
    the origin is interpolated linearly; beyond the largest observed FPR the
    last envelope value is held.
    """
    points = np.asarray(points, dtype=float)
    order = np.argsort(points[:, 0], kind="stable")
    fpr = points[order, 0]
    tpr = np.maximum.accumulate(points[order, 1])
    xs = np.concatenate(([0.0], fpr))
    ys = np.concatenate(([0.0], tpr))
    # collapse duplicate FPRs onto their best TPR
    keep = np.r_[xs[1:] != xs[:-1], True]
    return np.interp(np.asarray(fpr_grid, dtype=float), xs[keep], ys[keep])


def aggregate_roc(points_per_replicate, fpr_grid):
    """Mean and standard deviation of interpolated TPR across replicates."""
    tprs = np.array([interp_tpr(pts, fpr_grid) for pts in points_per_replicate])
    sd = tprs.std(axis=0, ddof=1) if tprs.shape[0] > 1 else np.zeros(tprs.shape[1])
    return tprs.mean(axis=0), sd


def bh_fdr(pvalues, q=0.10):
    """Benjamini-Hochberg step-up: indices of rejected sites at level q."""
    pvalues = np.asarray(pvalues, dtype=float)
    if np.any(pvalues < 0) or np.any(pvalues > 1) or np.any(np.isnan(pvalues)):
        raise DataError("p-values must lie in [0, 1]")
    n = pvalues.size
    order = np.argsort(pvalues, kind="stable")
    ranked = pvalues[order]
    passing = np.flatnonzero(ranked <= q * (np.arange(1, n + 1) / n))
    if passing.size == 0:
        return np.array([], dtype=int)
    cutoff = ranked[passing[-1]]
    return np.sort(np.flatnonzero(pvalues <= cutoff))


# ---------------------------------------------------------------------------
# Replicate runners
# ---------------------------------------------------------------------------


@dataclass
class ReplicateResult:
    rep: int
    points: dict  # method name -> (n, 2) ROC point array
    lam: float = np.nan


def _jade_dataset(config, curves, observations):
    if config.regime == "binomial":
        counts, reads = observations
        pooled_c = counts.sum(axis=1).astype(float)
        pooled_n = reads.sum(axis=1).astype(float)
        ybar = pooled_c / pooled_n
        _, weights = binomial_weights(pooled_c, pooled_n)
        nobs = np.ones(2)
    else:
        ybar = observations.mean(axis=1)
        weights = np.ones_like(ybar)
        nobs = np.full(2, float(config.n_per_group))
    return GroupedDataset(curves.positions, ybar, weights, nobs)


def jade_roc_points(dataset, truth, k=2, epsilon=0.005, n_folds=5,
                    gamma_count=100, lambda_count=20, **solve_kw):
    """Fusion-path ROC points: stage-one CV picks the smoothing penalty,
    then every path fit contributes one detection mask (site detected when
    the profile spread is at least epsilon). Returns (points, lam).

    Cross-validation and grid construction run at a loosened solver
    tolerance (penalty selection is insensitive at that level); the path
    fits behind the reported masks use the solver defaults.
    """
    params = PenaltyParams(lam=1.0, gamma=0.0, k=k, epsilon=epsilon)
    folds = tuning.make_folds(dataset.p, dataset.n_groups, n_folds)
    cv_kw = dict(solve_kw)
    cv_kw.setdefault("tol_abs", 1e-4)
    cv_kw.setdefault("tol_rel", 1e-3)
    lam_grid = tuning.default_lambda_grid(dataset, params, count=lambda_count, **cv_kw)
    curve = tuning.cv_lambda(dataset, params, lam_grid, folds, **cv_kw)
    params = PenaltyParams(lam=curve.selected, gamma=0.0, k=k, epsilon=epsilon)

    gammas = admm.gamma_grid(dataset, params, count=gamma_count, **cv_kw)
    fits = admm.solve_gamma_path(dataset, params, gammas, **solve_kw)
    masks = np.array(
        [
            (fit.beta.max(axis=0) - fit.beta.min(axis=0)) >= epsilon
            for fit in fits
            if fit.error is None
        ]
    )
    return roc_curve(masks, truth), curve.selected


def run_replicate(config, rep, curves=None, methods=("jade", "ttest_raw"),
                  epsilon=0.005, gamma_count=100, n_folds=5, **solve_kw):
    """One simulation replicate: generate data, score every method."""
    if curves is None:
        curves = gen_mean_curves(config.p, config.spacing)
        if config.regime == "binomial":
            curves = curves.rescaled()
    rng = np.random.default_rng([config.seed, rep])
    if config.regime == "ar":
        observations = simulate_ar(config, curves, rng)
    elif config.regime == "re":
        observations = simulate_re(config, curves, rng)
    else:
        observations = simulate_binomial(config, curves, rng)
    truth = curves.mask

    if config.regime == "binomial":
        counts, reads = observations
        props = counts / reads
        group_obs = (props[0], props[1])
    else:
        group_obs = (observations[0], observations[1])

    points = {}
    lam = np.nan
    for method in methods:
        if method == "jade":
            dataset = _jade_dataset(config, curves, observations)
            points[method], lam = jade_roc_points(
                dataset, truth, epsilon=epsilon, gamma_count=gamma_count,
                n_folds=n_folds, **solve_kw,
            )
        elif method == "ttest_raw":
            track = t_test_scores(group_obs, truth=truth)
            points[method] = roc_curve(track)
        elif method == "ttest_smoothed":
            smoother = make_trend_smoother(curves.positions)
            track = t_test_scores(group_obs, truth=truth, smoother=smoother)
            points[method] = roc_curve(track)
        else:
            raise ParameterError(f"unknown method {method!r}")
    return ReplicateResult(rep=rep, points=points, lam=lam)


def run_benchmark(config, n_reps, fpr_grid=None, methods=("jade", "ttest_raw"),
                  workers=1, **replicate_kw):
    """All replicates of one setting, aggregated to mean TPR at fixed FPR.

    Returns (rows, results): rows are CSV-ready dicts with method, setting,
    fpr, mean_tpr, sd_tpr; results are the per-replicate ROC points.
    """
    if fpr_grid is None:
        fpr_grid = np.round(np.arange(0.0, 1.0001, 0.02), 4)
    curves = gen_mean_curves(config.p, config.spacing)
    if config.regime == "binomial":
        curves = curves.rescaled()

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    run_replicate, config, rep, curves, methods, **replicate_kw
                )
                for rep in range(n_reps)
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            run_replicate(config, rep, curves, methods, **replicate_kw)
            for rep in range(n_reps)
        ]
    results.sort(key=lambda r: r.rep)

    rows = []
    for method in methods:
        mean_tpr, sd_tpr = aggregate_roc(
            [r.points[method] for r in results], fpr_grid
        )
        for fpr, mt, st in zip(fpr_grid, mean_tpr, sd_tpr):
            rows.append(
                {
                    "method": method,
                    "setting": config.label(),
                    "fpr": float(fpr),
                    "mean_tpr": float(mt),
                    "sd_tpr": float(st),
                }
            )
    return rows, results


def write_roc_csv(rows, path):
    """Aggregated ROC rows as CSV: method, setting, fpr, mean_tpr, sd_tpr."""
    fieldnames = ["method", "setting", "fpr", "mean_tpr", "sd_tpr"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
