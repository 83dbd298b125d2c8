"""Joint solver for smooth per-group profiles with cross-group fusion.

Minimizes, over one profile per group,

    sum_m N_m/2 ||A_m (ybar_m - theta_m)||^2
      + lam * sum_m ||D theta_m||_1
      + gamma * sum_{m<m'} |theta_m - theta_m'|  (elementwise, summed),

by operator splitting on the constraint set Dt theta_m = alpha_m,
theta_m = beta_m, where D factors as a first difference applied to the
scaled kth-order difference Dt. Each iteration solves a banded SPD system
per group, an exact 1D fused lasso per group, and an exact per-site fusion
prox; step sizes adapt by residual balancing with matching dual rescaling.

A solver invocation is single-threaded and owns its state; separate
invocations share nothing and may run concurrently.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded

from . import backends
from .diffops import SiteGrid, build_scaled_kth_difference, build_trend_operator
from .errors import (
    DataError,
    DimensionError,
    JadeError,
    NumericalError,
    ParameterError,
    UnderdeterminedError,
)

RHO_MIN = 1e-6
RHO_MAX = 1e8
RHO_FACTOR = 2.0
RHO_TRIGGER = 10.0
RHO_SPACING = 5


class GroupedDataset:
    """Per-group mean profiles with weights on a shared site grid.

    ybar and weights are (M, p); weights are inverse-standard-deviation
    scale with zeros marking missing measurements; nobs holds the group
    sizes N_m.
    """

    def __init__(self, grid, ybar, weights, nobs):
        if not isinstance(grid, SiteGrid):
            grid = SiteGrid(grid)
        ybar = np.ascontiguousarray(ybar, dtype=float)
        weights = np.ascontiguousarray(weights, dtype=float)
        nobs = np.ascontiguousarray(nobs, dtype=float)
        if ybar.ndim != 2 or ybar.shape[1] != grid.p:
            raise DimensionError(f"ybar must be (M, {grid.p}), got {ybar.shape}")
        if weights.shape != ybar.shape:
            raise DimensionError("weights and ybar shapes differ")
        if nobs.shape != (ybar.shape[0],):
            raise DimensionError("nobs must have one entry per group")
        if np.any(weights < 0):
            raise DataError("weights must be nonnegative")
        if np.any(nobs < 1):
            raise DataError("group sizes must be >= 1")
        if not np.all(np.isfinite(ybar[weights > 0])):
            raise DataError("ybar contains NaN/inf at a positively weighted site")
        ybar = np.where(weights > 0, ybar, 0.0)
        self.grid = grid
        self.ybar = ybar
        self.weights = weights
        self.nobs = nobs

    @property
    def n_groups(self):
        return self.ybar.shape[0]

    @property
    def p(self):
        return self.grid.p

    @property
    def n_total(self):
        return float(self.nobs.sum())


@dataclass(frozen=True)
class PenaltyParams:
    """Smoothing penalty lam, fusion penalty gamma, trend order k, and the
    threshold epsilon below which two profile values count as fused."""

    lam: float
    gamma: float
    k: int = 2
    epsilon: float = 0.005

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0 or self.epsilon < 0:
            raise ParameterError("penalties and epsilon must be nonnegative")
        if self.k < 0:
            raise ParameterError("trend order k must be >= 0")


@dataclass
class AdmmState:
    """All primal/dual iterates, step sizes, and the residual record."""

    theta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    u_alpha: np.ndarray
    u_beta: np.ndarray
    rho_alpha: np.ndarray
    rho_beta: float
    iteration: int = 0
    last_rho_iteration: int = -RHO_SPACING
    factors_stale: bool = True
    r_alpha: np.ndarray = None
    s_alpha: np.ndarray = None
    r_beta: float = np.inf
    s_beta: float = np.inf
    scale_pri_alpha: np.ndarray = None
    scale_dual_alpha: np.ndarray = None
    scale_pri_beta: float = 0.0
    scale_dual_beta: float = 0.0

    def copy(self):
        return AdmmState(
            theta=self.theta.copy(),
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            u_alpha=self.u_alpha.copy(),
            u_beta=self.u_beta.copy(),
            rho_alpha=self.rho_alpha.copy(),
            rho_beta=self.rho_beta,
            iteration=self.iteration,
            last_rho_iteration=self.last_rho_iteration,
            factors_stale=True,
            r_alpha=None if self.r_alpha is None else self.r_alpha.copy(),
            s_alpha=None if self.s_alpha is None else self.s_alpha.copy(),
            r_beta=self.r_beta,
            s_beta=self.s_beta,
            scale_pri_alpha=self.scale_pri_alpha,
            scale_dual_alpha=self.scale_dual_alpha,
            scale_pri_beta=self.scale_pri_beta,
            scale_dual_beta=self.scale_dual_beta,
        )


@dataclass
class JadeFit:
    """Solver output: profile estimates theta, fusion variables beta, and
    the objective recomputed from theta independently of the solver loop."""

    theta: np.ndarray
    beta: np.ndarray
    converged: bool
    iterations: int
    objective: float
    params: PenaltyParams
    state: AdmmState = field(default=None, repr=False)
    error: str = None


def objective(dataset, params, theta):
    """The penalized objective at theta, evaluated from scratch."""
    theta = np.asarray(theta, dtype=float)
    trend = build_trend_operator(dataset.grid, params.k)
    resid = dataset.weights * (dataset.ybar - theta)
    total = 0.5 * float(np.sum(dataset.nobs[:, None] * resid**2))
    total += params.lam * float(np.sum(np.abs(trend.matvec(theta))))
    mgroups = dataset.n_groups
    for a in range(mgroups):
        for b in range(a + 1, mgroups):
            total += params.gamma * float(np.sum(np.abs(theta[a] - theta[b])))
    return total


class _Workspace:
    """Precomputed operators and cached banded factorizations for one solve."""

    def __init__(self, dataset, params):
        self.dataset = dataset
        self.params = params
        self.dtilde = build_scaled_kth_difference(dataset.grid, params.k)
        self.gram = self.dtilde.gram_upper()
        self.quad = dataset.nobs[:, None] * dataset.weights**2
        self.rhs_data = self.quad * dataset.ybar
        self._factors = [None] * dataset.n_groups
        self._keys = [None] * dataset.n_groups

    def factor(self, m, rho_alpha_m, rho_beta):
        key = (rho_alpha_m, rho_beta)
        if self._keys[m] != key:
            ab = rho_alpha_m * self.gram
            ab[-1, :] += self.quad[m] + rho_beta
            try:
                self._factors[m] = cholesky_banded(ab, lower=False, check_finite=False)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD by construction
                raise NumericalError(
                    f"banded factorization failed for group {m} "
                    f"(rho_alpha={rho_alpha_m:g}, rho_beta={rho_beta:g}): {exc}"
                ) from exc
            self._keys[m] = key
        return self._factors[m]

    def invalidate(self):
        self._keys = [None] * len(self._keys)


def _row_norms(a):
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def _frob(a):
    return float(np.sqrt(np.vdot(a, a)))


def theta_update(state, dataset, params, workspace=None):
    """Solve the banded SPD system for each group's profile, in place.

    The system diag(N_m a_m^2) + rho_alpha_m Dt^T Dt + rho_beta I is
    positive definite for any weights, so the solve is exact up to the
    banded Cholesky roundoff.
    """
    ws = workspace if workspace is not None else _Workspace(dataset, params)
    if state.factors_stale:
        ws.invalidate()
        state.factors_stale = False
    pulled = ws.dtilde.rmatvec(state.alpha - state.u_alpha)
    for m in range(dataset.n_groups):
        rhs = (
            ws.rhs_data[m]
            + state.rho_alpha[m] * pulled[m]
            + state.rho_beta * (state.beta[m] - state.u_beta[m])
        )
        fac = ws.factor(m, state.rho_alpha[m], state.rho_beta)
        state.theta[m] = cho_solve_banded((fac, False), rhs, check_finite=False)
    return state


def _iterate(state, ws, params):
    """One full sweep: profile solve, smoothing prox, fusion prox, duals."""
    theta_update(state, ws.dataset, params, workspace=ws)
    dtheta = ws.dtilde.matvec(state.theta)

    alpha_old = state.alpha
    mgroups = ws.dataset.n_groups
    alpha_new = np.empty_like(state.alpha)
    for m in range(mgroups):
        alpha_new[m] = backends.dp_fused_lasso(
            dtheta[m] + state.u_alpha[m], params.lam / state.rho_alpha[m]
        )

    beta_old = state.beta
    beta_new = backends.fuse_columns(
        state.theta + state.u_beta, params.gamma / state.rho_beta
    )

    pri_alpha = dtheta - alpha_new
    pri_beta = state.theta - beta_new
    state.u_alpha += pri_alpha
    state.u_beta += pri_beta

    state.r_alpha = _row_norms(pri_alpha)
    state.s_alpha = state.rho_alpha * _row_norms(
        ws.dtilde.rmatvec(alpha_new - alpha_old)
    )
    state.r_beta = _frob(pri_beta)
    state.s_beta = state.rho_beta * _frob(beta_new - beta_old)

    state.scale_pri_alpha = np.maximum(_row_norms(dtheta), _row_norms(alpha_new))
    state.scale_dual_alpha = state.rho_alpha * _row_norms(
        ws.dtilde.rmatvec(state.u_alpha)
    )
    state.scale_pri_beta = max(_frob(state.theta), _frob(beta_new))
    state.scale_dual_beta = state.rho_beta * _frob(state.u_beta)

    state.alpha = alpha_new
    state.beta = beta_new
    state.iteration += 1

    if not (
        np.all(np.isfinite(state.r_alpha))
        and np.isfinite(state.r_beta)
        and np.isfinite(state.s_beta)
    ):
        raise NumericalError(
            f"non-finite residuals at iteration {state.iteration}"
        )


def check_convergence(state, tol_abs=1e-5, tol_rel=1e-4):
    """Residual-based stopping test: every primal and dual residual below
    tol_abs * sqrt(dim) + tol_rel * (scale of the matching iterates)."""
    if state.r_alpha is None:
        return False
    mgroups, p = state.theta.shape
    dim_alpha = state.alpha.shape[1]
    eps_pri_a = tol_abs * np.sqrt(dim_alpha) + tol_rel * state.scale_pri_alpha
    eps_dual_a = tol_abs * np.sqrt(p) + tol_rel * state.scale_dual_alpha
    if np.any(state.r_alpha > eps_pri_a) or np.any(state.s_alpha > eps_dual_a):
        return False
    dim_beta = mgroups * p
    eps_pri_b = tol_abs * np.sqrt(dim_beta) + tol_rel * state.scale_pri_beta
    eps_dual_b = tol_abs * np.sqrt(dim_beta) + tol_rel * state.scale_dual_beta
    return state.r_beta <= eps_pri_b and state.s_beta <= eps_dual_b


def update_step_sizes(state):
    """Residual balancing: double a step size whose primal residual exceeds
    ten times its dual residual, halve it in the opposite case, at most every
    five iterations and within [1e-6, 1e8]; duals are rescaled by the exact
    ratio so the scaled iteration is unchanged."""
    if state.r_alpha is None:
        return state
    if state.iteration - state.last_rho_iteration < RHO_SPACING:
        return state
    state.last_rho_iteration = state.iteration
    changed = False
    for m in range(state.rho_alpha.size):
        old = state.rho_alpha[m]
        new = old
        if state.r_alpha[m] > RHO_TRIGGER * state.s_alpha[m]:
            new = min(old * RHO_FACTOR, RHO_MAX)
        elif state.s_alpha[m] > RHO_TRIGGER * state.r_alpha[m]:
            new = max(old / RHO_FACTOR, RHO_MIN)
        if new != old:
            state.u_alpha[m] *= old / new
            state.rho_alpha[m] = new
            changed = True
    old = state.rho_beta
    new = old
    if state.r_beta > RHO_TRIGGER * state.s_beta:
        new = min(old * RHO_FACTOR, RHO_MAX)
    elif state.s_beta > RHO_TRIGGER * state.r_beta:
        new = max(old / RHO_FACTOR, RHO_MIN)
    if new != old:
        state.u_beta *= old / new
        state.rho_beta = new
        changed = True
    if changed:
        state.factors_stale = True
    return state


def _filled_profiles(dataset):
    """ybar with missing sites filled by interpolation along the grid."""
    pos = dataset.grid.positions
    filled = np.empty_like(dataset.ybar)
    for m in range(dataset.n_groups):
        obs = dataset.weights[m] > 0
        filled[m] = np.interp(pos, pos[obs], dataset.ybar[m][obs])
    return filled


def _init_state(dataset, params, ws, init, tol_abs, tol_rel, max_iter):
    mgroups = dataset.n_groups
    if isinstance(init, JadeFit):
        init = init.state
    if isinstance(init, AdmmState):
        state = init.copy()
        state.iteration = 0
        state.last_rho_iteration = -RHO_SPACING
        return state

    if init is not None:
        beta0 = np.ascontiguousarray(init, dtype=float)
        if beta0.shape != dataset.ybar.shape:
            raise DimensionError(
                f"initial beta must be {dataset.ybar.shape}, got {beta0.shape}"
            )
        beta0 = beta0.copy()
    elif params.gamma > 0 and mgroups > 1:
        # start from the uncoupled solution: one smoothing fit per group
        beta0 = np.empty_like(dataset.ybar)
        solo = replace(params, gamma=0.0)
        for m in range(mgroups):
            sub = GroupedDataset(
                dataset.grid,
                dataset.ybar[m : m + 1],
                dataset.weights[m : m + 1],
                dataset.nobs[m : m + 1],
            )
            fit = solve_jade(
                sub, solo, tol_abs=tol_abs, tol_rel=tol_rel, max_iter=max_iter
            )
            beta0[m] = fit.theta[0]
    else:
        beta0 = _filled_profiles(dataset)

    alpha0 = ws.dtilde.matvec(beta0)
    # step sizes start on the scale of the data-term curvature
    rho0 = max(float(np.mean(ws.quad)), 1e-2)
    return AdmmState(
        theta=beta0.copy(),
        alpha=alpha0,
        beta=beta0,
        u_alpha=np.zeros_like(alpha0),
        u_beta=np.zeros_like(beta0),
        rho_alpha=np.full(mgroups, rho0),
        rho_beta=rho0,
    )


def solve_jade(dataset, params, init=None, *, tol_abs=1e-5, tol_rel=1e-4,
               max_iter=20000):
    """Run the full splitting iteration to convergence.

    init may be None (cold start: per-group smoothing fits when gamma > 0),
    a (M, p) array of starting profiles, or a previous JadeFit/AdmmState
    whose primal, dual, and step-size variables are carried forward.

    Returns a JadeFit; non-convergence within max_iter is reported on the
    converged flag, not raised.
    """
    if params.gamma > 0 and dataset.n_groups < 2:
        raise ParameterError("fusion penalty requires at least two groups")
    effective = np.count_nonzero(dataset.weights > 0, axis=1)
    if np.any(effective < params.k + 2):
        raise UnderdeterminedError(
            f"every group needs >= k+2 = {params.k + 2} observed sites; "
            f"got {effective.tolist()}"
        )
    ws = _Workspace(dataset, params)
    state = _init_state(dataset, params, ws, init, tol_abs, tol_rel, max_iter)
    converged = False
    for _ in range(max_iter):
        _iterate(state, ws, params)
        if check_convergence(state, tol_abs, tol_rel):
            converged = True
            break
        update_step_sizes(state)
    if not np.all(np.isfinite(state.theta)):
        raise NumericalError("solver produced non-finite profiles")
    return JadeFit(
        theta=state.theta.copy(),
        beta=state.beta.copy(),
        converged=converged,
        iterations=state.iteration,
        objective=objective(dataset, params, state.theta),
        params=params,
        state=state,
    )


def is_fully_fused(beta, epsilon):
    """True when the largest per-site spread across profiles is below epsilon."""
    spread = beta.max(axis=0) - beta.min(axis=0)
    return bool(np.max(spread) < epsilon)


def gamma_grid(dataset, params, count=100, *, tol_abs=1e-5, tol_rel=1e-4,
               max_iter=20000):
    """Log-spaced fusion-penalty grid from gamma_max down three decades.

    gamma_max is the smallest tested value achieving full fusion, found by
    doubling search from a data-scaled floor; if full fusion is unreachable
    below the cap a warning is issued and the cap is used.
    """
    if count < 2:
        raise ParameterError("gamma grid needs at least two values")
    quad = dataset.nobs[:, None] * dataset.weights**2
    scale = max(1.0, float(np.max(np.abs(quad * dataset.ybar))))
    gamma = 1e-4 * scale
    cap = 1e8 * scale
    fit = None
    while True:
        trial = replace(params, gamma=gamma)
        fit = solve_jade(
            dataset, trial, init=fit, tol_abs=tol_abs, tol_rel=tol_rel,
            max_iter=max_iter,
        )
        if is_fully_fused(fit.beta, params.epsilon):
            break
        if gamma >= cap:
            warnings.warn(
                f"full fusion not reached below cap {cap:g}; using the cap",
                RuntimeWarning,
                stacklevel=2,
            )
            break
        gamma = min(gamma * 2.0, cap)
    return np.geomspace(gamma, gamma / 1e3, count)


def solve_gamma_path(dataset, params, gammas, *, tol_abs=1e-5, tol_rel=1e-4,
               max_iter=20000, warm=True):
    """Fits along a fusion-penalty path, warm-starting each from the last.

    Solver errors at individual grid points are captured on the returned
    fit's error field and the path continues from the previous state.
    """
    fits = []
    prev = None
    for gamma in gammas:
        point = replace(params, gamma=float(gamma))
        try:
            fit = solve_jade(
                dataset, point, init=prev if warm else None,
                tol_abs=tol_abs, tol_rel=tol_rel, max_iter=max_iter,
            )
            prev = fit
        except JadeError as exc:
            fit = JadeFit(
                theta=np.full_like(dataset.ybar, np.nan),
                beta=np.full_like(dataset.ybar, np.nan),
                converged=False,
                iterations=0,
                objective=np.nan,
                params=point,
                error=str(exc),
            )
        fits.append(fit)
    return fits
