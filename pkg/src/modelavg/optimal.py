"""Optimal model averaging estimators.

Weights are chosen to minimize a risk criterion rather than to track a
model-selection criterion: a Mallows-type penalized residual criterion,
the leave-one-out cross-validation error of the weighted prediction, and
k-fold cross-validation error over a LASSO shrinkage path. Each reduces
to a quadratic program over the probability simplex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classic import AveragedFit, _assemble, buckland_se
from .kernel import ConvergenceError, solve_least_squares, solve_simplex_qp
from .models import Dataset, ModelSpec, enumerate_all_subsets, enumerate_nested
from .rng import kfold_split

__all__ = [
    "LassoPath",
    "ResidualBundle",
    "candidate_bundle",
    "default_lambda_sequence",
    "jma_fit",
    "lae_fit",
    "lasso_fit",
    "lasso_path",
    "loo_cv_criterion",
    "mallows_criterion",
    "mma_fit",
]


@dataclass(frozen=True)
class ResidualBundle:
    """Per-candidate fit summaries arranged candidate-wise.

    residuals and hat_diag are n x k with one column per candidate;
    coefficients and coef_variances are k x (p+1) in the full coefficient
    space (intercept first, zero for excluded covariates). sigma2_full is
    the residual variance of the model with every covariate.
    """

    residuals: np.ndarray
    hat_diag: np.ndarray
    ranks: np.ndarray
    coefficients: np.ndarray
    coef_variances: np.ndarray
    sigma2_full: float


def _is_nested_prefix(specs: list[ModelSpec], p: int) -> bool:
    if len(specs) != p + 1:
        return False
    return all(
        s.include_intercept and s.covariate_indices == tuple(range(j))
        for j, s in enumerate(specs)
    )


def _prefix_bundle(data: Dataset) -> ResidualBundle:
    """Fast bundle for the nested candidate sequence.

    One sequential orthogonalization of the full design gives the
    projections, leverages, and ranks of every prefix model. Dependent
    columns are detected and carry zero coefficients; fitted values and
    residuals are unaffected by that representation choice.
    """
    n, p = data.n, data.p
    D = np.hstack([np.ones((n, 1)), data.X])
    m = p + 1
    Q = np.zeros((n, m))
    R = np.zeros((m, m))
    valid = np.zeros(m, dtype=bool)
    for j in range(m):
        col = D[:, j]
        norm0 = float(np.linalg.norm(col))
        q = col.copy()
        vs = np.nonzero(valid[:j])[0]
        for _ in range(2):  # re-orthogonalize once for stability
            proj = Q[:, vs].T @ q
            R[vs, j] += proj
            q = q - Q[:, vs] @ proj
        nq = float(np.linalg.norm(q))
        if nq > 1e-10 * max(norm0, 1e-300):
            valid[j] = True
            Q[:, j] = q / nq
            R[j, j] = nq

    qty = Q.T @ data.y
    contrib = Q * qty
    cum_fit = np.cumsum(contrib, axis=1)
    cum_hat = np.cumsum(Q * Q, axis=1)

    k = m  # candidates are prefixes of size 1..m
    E = np.empty((n, k))
    H = np.empty((n, k))
    ranks = np.empty(k)
    B = np.zeros((k, m))
    V = np.zeros((k, m))
    for j in range(k):
        size = j + 1
        E[:, j] = data.y - cum_fit[:, size - 1]
        H[:, j] = cum_hat[:, size - 1]
        vs = np.nonzero(valid[:size])[0]
        r = vs.size
        ranks[j] = r
        if r:
            Rv = R[np.ix_(vs, vs)]
            B[j, vs] = np.linalg.solve(Rv, qty[vs])
            Rinv = np.linalg.inv(Rv)
            inv_diag = np.einsum("ij,ij->i", Rinv, Rinv)
            rss = float(E[:, j] @ E[:, j])
            sigma2 = rss / (n - r) if n > r else 0.0
            V[j, vs] = sigma2 * inv_diag
    sigma2_full = float(E[:, -1] @ E[:, -1]) / (n - ranks[-1]) if n > ranks[-1] else 0.0
    return ResidualBundle(E, H, ranks, B, V, sigma2_full)


def candidate_bundle(data: Dataset, specs: list[ModelSpec]) -> ResidualBundle:
    """Residuals, leverages, ranks, and coefficients for a candidate set."""
    if not specs:
        raise ValueError("at least one candidate model required")
    if _is_nested_prefix(specs, data.p):
        return _prefix_bundle(data)

    n, p = data.n, data.p
    k = len(specs)
    E = np.empty((n, k))
    H = np.empty((n, k))
    ranks = np.empty(k)
    B = np.zeros((k, p + 1))
    V = np.zeros((k, p + 1))
    for j, spec in enumerate(specs):
        cols = [np.ones((n, 1))] if spec.include_intercept else []
        if spec.covariate_indices:
            cols.append(data.X[:, list(spec.covariate_indices)])
        fit = solve_least_squares(np.hstack(cols) if cols else np.zeros((n, 0)), data.y)
        E[:, j] = fit.residuals
        H[:, j] = fit.hat_diag
        ranks[j] = fit.rank
        var = fit.sigma2 * fit.xtx_inv_diag
        offset = 0
        if spec.include_intercept:
            B[j, 0] = fit.coefficients[0]
            V[j, 0] = var[0]
            offset = 1
        for i, col in enumerate(spec.covariate_indices):
            B[j, 1 + col] = fit.coefficients[offset + i]
            V[j, 1 + col] = var[offset + i]
    full = solve_least_squares(np.hstack([np.ones((n, 1)), data.X]), data.y)
    return ResidualBundle(E, H, ranks, B, V, full.sigma2)


def mallows_criterion(bundle: ResidualBundle, weights) -> float:
    """Penalized residual criterion: ||E w||^2 + 2 sigma2 * (w . ranks)."""
    w = np.asarray(weights, dtype=float)
    ew = bundle.residuals @ w
    return float(ew @ ew) + 2.0 * bundle.sigma2_full * float(w @ bundle.ranks)


def loo_cv_criterion(loo_residuals: np.ndarray, weights) -> float:
    """Mean squared leave-one-out error of the weighted prediction."""
    w = np.asarray(weights, dtype=float)
    ew = loo_residuals @ w
    return float(ew @ ew) / loo_residuals.shape[0]


def _oma_assemble(method, bundle, w, level, names, p) -> AveragedFit:
    coef = w @ bundle.coefficients
    ses = np.array(
        [buckland_se(bundle.coefficients[:, j], bundle.coef_variances[:, j], w)
         for j in range(p + 1)]
    )
    return _assemble(method, w, coef, ses, level, names)


def mma_fit(
    data: Dataset,
    specs: list[ModelSpec] | None = None,
    level: float = 0.95,
    all_subsets: bool = False,
) -> AveragedFit:
    """Mallows-criterion model averaging.

    The criterion is quadratic in the weights (residual cross products)
    with a linear penalty 2 sigma2 * rank per candidate, sigma2 estimated
    from the full model; the minimizing weights come from the simplex QP.
    Candidates default to the nested sequence; ``all_subsets=True`` opts
    into the exhaustive set.
    """
    if data.n <= data.p + 1:
        raise ValueError(
            f"the full model must be estimable: need n > p + 1, got n={data.n}, p={data.p}"
        )
    if specs is None:
        specs = enumerate_all_subsets(data.p) if all_subsets else enumerate_nested(data.p)
    bundle = candidate_bundle(data, specs)
    E = bundle.residuals
    w = solve_simplex_qp(2.0 * (E.T @ E), 2.0 * bundle.sigma2_full * bundle.ranks)
    return _oma_assemble("MMA", bundle, w, level, data.names, data.p)


def jma_fit(
    data: Dataset,
    specs: list[ModelSpec] | None = None,
    level: float = 0.95,
) -> AveragedFit:
    """Jackknife (leave-one-out) model averaging.

    Per-candidate LOO residuals come from the algebraic shortcut
    residual / (1 - leverage); the weighted LOO mean squared error is
    then minimized over the simplex.
    """
    if specs is None:
        specs = enumerate_nested(data.p)
    bundle = candidate_bundle(data, specs)
    loo = loo_residuals(bundle)
    w = solve_simplex_qp(2.0 * (loo.T @ loo) / data.n)
    return _oma_assemble("JMA", bundle, w, level, data.names, data.p)


def loo_residuals(bundle: ResidualBundle) -> np.ndarray:
    """LOO residual matrix from the shortcut e_i / (1 - h_i), per candidate."""
    H = bundle.hat_diag
    if np.any(H >= 1.0 - 1e-8):
        i, j = np.argwhere(H >= 1.0 - 1e-8)[0]
        raise ValueError(
            f"observation {i} has leverage 1 in candidate {j}; "
            "leave-one-out residuals are undefined"
        )
    return bundle.residuals / (1.0 - H)


# ---------------------------------------------------------------------------
# LASSO path and LASSO averaging


@dataclass(frozen=True)
class LassoPath:
    """Coefficients along a descending shrinkage sequence.

    ``coefficients`` is L x (p+1) on the original data scale, intercept
    first. ``column_means``/``column_scales`` record the standardization
    used during the coordinate descent.
    """

    lambdas: np.ndarray
    coefficients: np.ndarray
    column_means: np.ndarray
    column_scales: np.ndarray


def _cd_sweep(G, b, diag, act, beta, grad, half):
    """One cyclic coordinate pass; grad tracks b - G beta. Returns max change."""
    delta = 0.0
    for j in act:
        z = grad[j] + diag[j] * beta[j]
        if z > half:
            new = (z - half) / diag[j]
        elif z < -half:
            new = (z + half) / diag[j]
        else:
            new = 0.0
        d = new - beta[j]
        if d != 0.0:
            beta[j] = new
            grad -= G[j] * d
            if abs(d) > delta:
                delta = abs(d)
    return delta


def _active_set_solution(G, b, act_mask, beta, half, scale, inv_cache):
    """Stationarity solve on an evolving support for one penalty level.

    For a fixed support and sign pattern the penalized stationarity
    conditions are linear. Starting from the support proposed by the
    coordinate sweep: solve, drop coordinates whose solved sign
    contradicts the assumed one, admit the worst subgradient violator,
    and repeat. Returns (beta, grad, certified); a certified point
    satisfies the full KKT system at solver precision and is therefore
    the global minimizer. On numerically singular supports the solve may
    come back uncertified; it is still a sign-consistent near-optimum the
    caller can use as a warm jump for the plain sweeps.

    inv_cache holds the support Gram inverse keyed by the support tuple;
    adjacent penalty levels usually share supports, so most levels cost
    one cached matrix-vector solve plus the KKT scan.
    """
    kkt_tol = 1e-8 * max(scale, half)
    support = list(np.nonzero(beta)[0])
    signs = list(np.sign(beta[support]))
    b_act_max = float(np.max(np.abs(b[act_mask]), initial=0.0))
    for _ in range(8 * max(int(act_mask.sum()), 1)):
        if not support:
            if b_act_max <= half + kkt_tol:
                return np.zeros_like(beta), b.copy(), True
            masked = np.where(act_mask, np.abs(b), -1.0)
            j = int(np.argmax(masked))
            support, signs = [j], [float(np.sign(b[j]))]
        key = tuple(support)
        idx = np.array(support)
        sgn = np.array(signs)
        rhs = b[idx] - half * sgn
        entry = inv_cache.get(key)
        if entry is None:
            Gs = G[idx[:, None], idx]
            try:
                entry = np.linalg.inv(Gs)
            except np.linalg.LinAlgError:
                entry = None
            if len(inv_cache) > 64:
                inv_cache.clear()
            inv_cache[key] = entry if entry is not None else "singular"
        elif isinstance(entry, str):
            entry = None
        if entry is None:
            Gs = G[idx[:, None], idx]
            cand, *_ = np.linalg.lstsq(Gs, rhs, rcond=None)
        else:
            cand = entry @ rhs
        flipped = cand * sgn < 0.0
        if np.any(flipped):
            keep = ~flipped
            support = [support[i] for i in range(len(support)) if keep[i]]
            signs = [signs[i] for i in range(len(signs)) if keep[i]]
            continue
        grad = b - G[:, idx] @ cand
        if float(np.max(np.abs(grad[idx] - half * sgn))) > kkt_tol and entry is not None:
            # The cached inverse is too inaccurate here; retry min-norm.
            Gs = G[idx[:, None], idx]
            alt, *_ = np.linalg.lstsq(Gs, rhs, rcond=None)
            if not np.any(alt * sgn < 0.0):
                grad_alt = b - G[:, idx] @ alt
                if np.max(np.abs(grad_alt[idx] - half * sgn)) < np.max(
                    np.abs(grad[idx] - half * sgn)
                ):
                    cand, grad = alt, grad_alt
        full = np.zeros_like(beta)
        full[idx] = cand
        if float(np.max(np.abs(grad[idx] - half * sgn))) > kkt_tol:
            return full, grad, False
        viol = np.where(act_mask, np.abs(grad), 0.0)
        viol[idx] = 0.0
        worst = int(np.argmax(viol))
        if viol[worst] > half + kkt_tol:
            support.append(worst)
            signs.append(float(np.sign(grad[worst])))
            continue
        return full, grad, True
    return None


def _penalized_objective(G, b, beta, half):
    # Shifted objective: ||y - X beta||^2 - ||y||^2 + lam |beta|, on the
    # standardized scale; enough for monotonicity comparisons.
    return float(beta @ (G @ beta)) - 2.0 * float(b @ beta) + 2.0 * half * float(
        np.sum(np.abs(beta))
    )


def _cd_path(G, b, diag, active, lambdas, tol=1e-9, max_sweeps=1_000_000):
    """Cyclic coordinate descent over a descending grid with warm starts.

    Each penalty level cycles over the warm-start support, then runs an
    exact stationarity solve on the proposed support. A solve certified
    by the subgradient conditions is the minimizer and is accepted
    outright; an uncertified solve (numerically singular support) is used
    as a warm jump when it does not increase the objective, after which
    full cyclic sweeps run until the max coefficient change drops below
    tol.
    """
    p = b.shape[0]
    L = lambdas.shape[0]
    out = np.zeros((p, L))
    if not np.any(active):
        return out
    act = np.nonzero(active)[0]
    act_mask = active.copy()
    beta = np.zeros(p)
    grad = b.copy()
    scale = float(np.max(np.abs(b[act]), initial=1.0))
    sweeps = 0
    inv_cache: dict = {}
    for i, lam in enumerate(lambdas):
        half = 0.5 * lam
        sweeps += 1
        if sweeps > max_sweeps:
            raise ConvergenceError(f"lasso coordinate descent exceeded {max_sweeps} sweeps")
        support = np.nonzero(beta)[0]
        cycle = support if support.size else act
        done = _cd_sweep(G, b, diag, cycle, beta, grad, half) < tol and support.size == 0
        if not done:
            solved = _active_set_solution(G, b, act_mask, beta, half, scale, inv_cache)
            if solved is not None:
                cand, cand_grad, certified = solved
                if certified:
                    beta, grad = cand, cand_grad
                    done = True
                elif _penalized_objective(G, b, cand, half) <= _penalized_objective(
                    G, b, beta, half
                ):
                    beta, grad = cand.copy(), cand_grad.copy()
        while not done:
            sweeps += 1
            if sweeps > max_sweeps:
                raise ConvergenceError(f"lasso coordinate descent exceeded {max_sweeps} sweeps")
            done = _cd_sweep(G, b, diag, act, beta, grad, half) < tol
        out[:, i] = beta
    return out


def _standardized_problem(data: Dataset):
    means = data.X.mean(axis=0)
    scales = data.X.std(axis=0)
    active = scales > 0.0
    Xs = np.zeros_like(data.X)
    Xs[:, active] = (data.X[:, active] - means[active]) / scales[active]
    # Exact duplicate columns (feature expansions of binary covariates
    # reproduce parent columns bitwise) would make the penalized solution
    # non-unique and the stationarity systems singular; the first copy
    # keeps the whole coefficient, an equally valid minimizer.
    seen: dict[bytes, int] = {}
    for j in np.nonzero(active)[0]:
        key = Xs[:, j].tobytes()
        if key in seen:
            active[j] = False
            Xs[:, j] = 0.0
        else:
            seen[key] = int(j)
    ybar = float(data.y.mean())
    yc = data.y - ybar
    G = Xs.T @ Xs
    b = Xs.T @ yc
    return Xs, means, scales, active, ybar, G, b


def lasso_path(data: Dataset, lambdas) -> LassoPath:
    """Penalized least squares along a descending nonnegative lambda grid.

    Minimizes sum_i (y_i - b0 - x_i'b)^2 + lambda * sum_j |b_j| by cyclic
    coordinate descent on standardized columns, intercept unpenalized;
    coefficients are returned on the original scale.
    """
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("lambda grid must be a nonempty 1-d vector")
    if np.any(lam < 0.0):
        raise ValueError("lambda values must be nonnegative")
    if np.any(np.diff(lam) > 0.0):
        raise ValueError("lambda grid must be nonincreasing")
    _, means, scales, active, ybar, G, b = _standardized_problem(data)
    diag = np.diag(G).copy()
    diag[~active] = 1.0  # never used; avoids divide warnings
    Bstd = _cd_path(G, b, diag, active, lam)
    slopes = np.zeros_like(Bstd)
    slopes[active] = Bstd[active] / scales[active, None]
    intercepts = ybar - means @ slopes
    coefs = np.column_stack([intercepts, slopes.T])
    return LassoPath(lam, coefs, means, scales)


def lasso_fit(data: Dataset, lam: float) -> np.ndarray:
    """Coefficients (intercept first) of the penalized fit at one lambda."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    return lasso_path(data, np.array([float(lam)])).coefficients[0]


def default_lambda_sequence(data: Dataset, num: int = 100) -> np.ndarray:
    """Descending grid from the smallest all-zero lambda down to 1e-4.

    The largest value is the smallest lambda at which every slope is zero
    on standardized columns, 2 * max_j |x_j'(y - ybar)|; interior values
    are equally spaced on the log scale.
    """
    if num < 2:
        raise ValueError("the grid needs at least two values")
    _, _, _, active, _, _, b = _standardized_problem(data)
    if not np.any(active):
        raise ValueError("all covariate columns are constant")
    lam_max = 2.0 * float(np.max(np.abs(b[active])))
    lam_min = 1e-4
    if lam_max <= lam_min:
        raise ValueError(
            f"largest useful lambda {lam_max:.3g} does not exceed the floor {lam_min}"
        )
    grid = np.exp(np.linspace(np.log(lam_max), np.log(lam_min), num))
    grid[0] = lam_max
    grid[-1] = lam_min
    return grid


def lae_fit(
    data: Dataset,
    lambdas=None,
    folds: int = 10,
    seed: int = 0,
    level: float = 0.95,
) -> AveragedFit:
    """LASSO averaging over a tuning grid.

    Builds the n x L matrix of k-fold cross-validation residuals, one
    column per tuning value, minimizes the quadratic cross-validation
    error over the simplex, and returns the weighted combination of the
    full-data fits. Standard errors use the between-fit spread only (the
    shrinkage fits carry no classical within-model variance).
    """
    if lambdas is None:
        lambdas = default_lambda_sequence(data)
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("lambda grid must be a nonempty 1-d vector")
    if folds > data.n:
        raise ValueError(f"fold count {folds} exceeds n={data.n}")

    # Fit on a descending unique grid, then map back to the given order.
    order_vals = np.unique(lam)[::-1]
    position = {v: i for i, v in enumerate(order_vals)}
    back = np.array([position[v] for v in lam])

    L = lam.shape[0]
    cv_resid = np.empty((data.n, L))
    fold = kfold_split(data.n, folds, seed)
    for f in range(folds):
        train = fold != f
        sub = Dataset(data.y[train], data.X[train], data.names)
        path = lasso_path(sub, order_vals)
        coefs = path.coefficients[back]
        preds = coefs[:, 0][None, :] + data.X[~train] @ coefs[:, 1:].T
        cv_resid[~train] = data.y[~train, None] - preds

    w = solve_simplex_qp(2.0 * (cv_resid.T @ cv_resid) / data.n)
    full = lasso_path(data, order_vals).coefficients[back]
    coef = w @ full
    ses = np.array(
        [buckland_se(full[:, j], np.zeros(L), w) for j in range(data.p + 1)]
    )
    return _assemble("LAE", w, coef, ses, level, data.names)
