"""Slow, independent reference implementations used only by the test suite.

Everything in here is deliberately written with dense numpy and exhaustive
enumeration, sharing no code with the package under test. These routines are
the source of every frozen expected value in the tests; they must stay
independent of the fast paths they certify.
"""

import itertools

import numpy as np

# ---------------------------------------------------------------------------
# Dense difference operators
# ---------------------------------------------------------------------------


def dense_first_difference(rows):
    """Dense rows x (rows+1) first-difference matrix."""
    d = np.zeros((rows, rows + 1))
    for i in range(rows):
        d[i, i] = -1.0
        d[i, i + 1] = 1.0
    return d


def dense_scaled_diff(positions, k):
    """Dense (p-k) x p scaled kth-order difference matrix, by recursion.

    Base case is the identity; each level applies a first difference and
    rescales row j by i / (s_{j+i} - s_j).
    """
    positions = np.asarray(positions, dtype=float)
    p = positions.size
    op = np.eye(p)
    for i in range(1, k + 1):
        scale = i / (positions[i:] - positions[: p - i])
        op = np.diag(scale) @ dense_first_difference(p - i) @ op
    return op


def dense_trend_operator(positions, k):
    """Dense (p-k-1) x p trend-penalty matrix: D^1 times the scaled diff."""
    p = len(positions)
    return dense_first_difference(p - k - 1) @ dense_scaled_diff(positions, k)


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def fused_lasso_objective(beta, y, penalty):
    beta = np.asarray(beta, dtype=float)
    return 0.5 * np.sum((beta - y) ** 2) + penalty * np.sum(np.abs(np.diff(beta)))


def fusion_prox_objective(beta, c, w):
    beta = np.asarray(beta, dtype=float)
    m = beta.size
    pair = sum(
        abs(beta[a] - beta[b]) for a in range(m) for b in range(a + 1, m)
    )
    return 0.5 * np.sum((beta - c) ** 2) + w * pair


def jade_objective_dense(theta, ybar, weights, nobs, positions, k, lam, gamma):
    """Penalized objective evaluated densely: weighted fit + trend + fusion.

    theta, ybar, weights are (M, p); nobs is (M,).
    """
    theta = np.asarray(theta, dtype=float)
    mgroups = theta.shape[0]
    d = dense_trend_operator(positions, k)
    total = 0.0
    for m in range(mgroups):
        resid = weights[m] * (ybar[m] - theta[m])
        total += 0.5 * nobs[m] * np.sum(resid**2)
        total += lam * np.sum(np.abs(d @ theta[m]))
    for a in range(mgroups):
        for b in range(a + 1, mgroups):
            total += gamma * np.sum(np.abs(theta[a] - theta[b]))
    return total


# ---------------------------------------------------------------------------
# Exact fused lasso by KKT enumeration (tiny q only)
# ---------------------------------------------------------------------------


def enum_fused_lasso(y, penalty, tol=1e-11):
    """Exact 1D fused-lasso minimizer for small q via stationarity enumeration.

    Enumerates every contiguous block partition and every sign assignment on
    the unfused boundaries, solves the block stationarity equations, and keeps
    the feasible candidate with the lowest objective. Cost is exponential in
    q; intended for q <= 8.
    """
    y = np.asarray(y, dtype=float)
    q = y.size
    if penalty == 0 or q == 1:
        return y.copy()

    best_obj = np.inf
    best_beta = None
    for cuts in itertools.product([0, 1], repeat=q - 1):
        blocks = []
        start = 0
        for j, cut in enumerate(cuts):
            if cut:
                blocks.append(list(range(start, j + 1)))
                start = j + 1
        blocks.append(list(range(start, q)))
        nb = len(blocks)
        for signs in itertools.product([-1.0, 1.0], repeat=nb - 1):
            s = [0.0, *signs, 0.0]
            values = [
                (y[blk].sum() + penalty * (s[b + 1] - s[b])) / len(blk)
                for b, blk in enumerate(blocks)
            ]
            # boundary signs must match the realized jumps
            ok = all(
                (values[b + 1] - values[b]) * s[b + 1] > tol
                for b in range(nb - 1)
            )
            if not ok:
                continue
            # interior subgradients must stay inside [-1, 1]
            feasible = True
            for b, blk in enumerate(blocks):
                t = s[b]
                for i in blk[:-1]:
                    t += (values[b] - y[i]) / penalty
                    if abs(t) > 1.0 + 1e-9:
                        feasible = False
                        break
                if not feasible:
                    break
            if not feasible:
                continue
            beta = np.empty(q)
            for b, blk in enumerate(blocks):
                beta[blk] = values[b]
            obj = fused_lasso_objective(beta, y, penalty)
            if obj < best_obj:
                best_obj = obj
                best_beta = beta
    return best_beta


# ---------------------------------------------------------------------------
# Exact pairwise-fusion prox by set-partition enumeration (small M only)
# ---------------------------------------------------------------------------


def _set_partitions(items):
    if len(items) == 1:
        yield [items]
        return
    first, rest = items[0], items[1:]
    for smaller in _set_partitions(rest):
        for idx in range(len(smaller)):
            yield smaller[:idx] + [[first] + smaller[idx]] + smaller[idx + 1 :]
        yield [[first]] + smaller


def enum_fusion_prox(c, w, tol=1e-11):
    """Exact minimizer of the pairwise-fusion prox for small M.

    Enumerates every partition of the groups into fused blocks and every
    strict ordering of block values; solves block stationarity and checks
    feasibility of the within-block subgradients via the cut condition of
    Hoffman's circulation theorem.
    """
    c = np.asarray(c, dtype=float)
    mgroups = c.size
    if w == 0 or mgroups == 1:
        return c.copy()

    best_obj = np.inf
    best_beta = None
    for blocks in _set_partitions(list(range(mgroups))):
        for order in itertools.permutations(range(len(blocks))):
            sizes = [len(blocks[b]) for b in order]
            below = np.concatenate([[0], np.cumsum(sizes)[:-1]])
            above = mgroups - np.cumsum(sizes)
            values = []
            for pos, b in enumerate(order):
                blk = blocks[b]
                values.append(c[blk].mean() - w * (below[pos] - above[pos]))
            if any(
                values[i + 1] - values[i] <= tol for i in range(len(values) - 1)
            ):
                continue
            feasible = True
            for pos, b in enumerate(order):
                blk = blocks[b]
                r = (c[blk] - values[pos]) / w - (below[pos] - above[pos])
                size = len(blk)
                for subset_bits in range(1, 2**size - 1):
                    members = [
                        r[i] for i in range(size) if subset_bits >> i & 1
                    ]
                    ns = len(members)
                    if abs(sum(members)) > ns * (size - ns) + 1e-9:
                        feasible = False
                        break
                if not feasible:
                    break
            if not feasible:
                continue
            beta = np.empty(mgroups)
            for pos, b in enumerate(order):
                beta[blocks[b]] = values[pos]
            obj = fusion_prox_objective(beta, c, w)
            if obj < best_obj:
                best_obj = obj
                best_beta = beta
    return best_beta


# ---------------------------------------------------------------------------
# Long-run proximal-subgradient solver for the full objective
# ---------------------------------------------------------------------------


def subgradient_solve(
    ybar,
    weights,
    nobs,
    positions,
    k,
    lam,
    gamma,
    n_stages=36,
    iters_per_stage=4000,
    step0=None,
):
    """Minimize the full objective by long-run proximal-subgradient descent.

    Each iteration takes a forward subgradient step on the two l1 penalties
    followed by an exact (elementwise) proximal step on the weighted
    quadratic fit term. The step size decreases geometrically across stages
    and each stage restarts from the best iterate seen. Slow but simple, and
    entirely separate from the operator-splitting solver it is used to
    certify. Returns (theta, best objective seen).
    """
    ybar = np.asarray(ybar, dtype=float)
    weights = np.asarray(weights, dtype=float)
    nobs = np.asarray(nobs, dtype=float)
    mgroups, _ = ybar.shape
    d = dense_trend_operator(positions, k)

    quad = nobs[:, None] * weights**2
    theta = np.where(weights > 0, ybar, 0.0)
    best = jade_objective_dense(theta, ybar, weights, nobs, positions, k, lam, gamma)
    best_theta = theta.copy()

    if step0 is None:
        scale = float(np.max(np.abs(ybar))) or 1.0
        step0 = 0.05 * scale

    pairs = list(itertools.combinations(range(mgroups), 2))
    step = step0
    for _ in range(n_stages):
        theta = best_theta.copy()
        for _ in range(iters_per_stage):
            sub = np.zeros_like(theta)
            for m in range(mgroups):
                sub[m] = lam * (d.T @ np.sign(d @ theta[m]))
            for a, b in pairs:
                sgn = np.sign(theta[a] - theta[b])
                sub[a] += gamma * sgn
                sub[b] -= gamma * sgn
            forward = theta - step * sub
            theta = (forward + step * quad * ybar) / (1.0 + step * quad)
            obj = jade_objective_dense(
                theta, ybar, weights, nobs, positions, k, lam, gamma
            )
            if obj < best:
                best = obj
                best_theta = theta.copy()
        step *= 0.62
    return best_theta, best


# ---------------------------------------------------------------------------
# Random solver instances (shared by the freeze tool and the acceptance test)
# ---------------------------------------------------------------------------


def random_instance(seed):
    """Small random solver instance with irregular spacing and missing sites."""
    rng = np.random.default_rng(seed)
    p = int(rng.integers(6, 13))
    mgroups = int(rng.integers(2, 4))
    k = int(rng.integers(0, 3))
    positions = np.cumsum(rng.uniform(0.5, 2.0, size=p))
    nobs = rng.integers(1, 6, size=mgroups).astype(float)

    weights = np.empty((mgroups, p))
    for m in range(mgroups):
        while True:
            w = rng.uniform(0.3, 2.0, size=p)
            w[rng.random(p) < 0.15] = 0.0
            if np.count_nonzero(w) >= k + 2:
                break
        weights[m] = w

    base = rng.normal(0.0, 1.0, size=p).cumsum() * 0.3
    ybar = base + rng.normal(0.0, 0.7, size=(mgroups, p))
    ybar[weights == 0] = 0.0

    lam = float(np.exp(rng.uniform(np.log(0.05), np.log(5.0))))
    gamma = float(np.exp(rng.uniform(np.log(0.02), np.log(2.0))))
    return {
        "seed": seed,
        "p": p,
        "M": mgroups,
        "k": k,
        "positions": positions,
        "nobs": nobs,
        "weights": weights,
        "ybar": ybar,
        "lam": lam,
        "gamma": gamma,
    }
