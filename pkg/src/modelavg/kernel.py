"""Dense numeric kernel shared by every estimator in the package.

Least squares with rank handling, Euclidean projection onto the
probability simplex, a simplex-constrained quadratic program solved by
accelerated projected gradient, nonnegative least squares, and the
inverse normal CDF used for interval estimates. All functions are pure
and operate on float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConvergenceError",
    "LsqFit",
    "check_simplex",
    "norm_quantile",
    "project_to_simplex",
    "solve_least_squares",
    "solve_nnls",
    "solve_simplex_qp",
]


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before converging."""


@dataclass(frozen=True)
class LsqFit:
    """Least squares solution plus the diagnostics the averaging estimators need.

    Attributes
    ----------
    coefficients : (p,) minimum-norm solution of min ||X b - y||.
    residuals : (n,) y minus fitted values.
    hat_diag : (n,) leverage values, the diagonal of X (X'X)^+ X'.
    sigma2 : residual variance estimate RSS / (n - rank), 0 when n <= rank.
    rank : effective column rank of X.
    xtx_inv_diag : (p,) diagonal of (X'X)^+, used for coefficient variances.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    hat_diag: np.ndarray
    sigma2: float
    rank: int
    xtx_inv_diag: np.ndarray


def solve_least_squares(X, y, rank_tol: float = 1e-10) -> LsqFit:
    """Solve min ||X b - y||^2, returning the minimum-norm solution.

    Rank is decided from the singular values at relative tolerance
    ``rank_tol``; for rank-deficient X the SVD pseudoinverse solution is
    returned and ``rank`` reflects the deficiency.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    if y.ndim != 1:
        raise ValueError("y must be a 1-d vector")
    n, p = X.shape
    if n != y.shape[0]:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]} entries")
    if n == 0:
        raise ValueError("empty input: at least one observation required")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")

    if p == 0:
        rss = float(y @ y)
        return LsqFit(
            coefficients=np.zeros(0),
            residuals=y.copy(),
            hat_diag=np.zeros(n),
            sigma2=rss / n,
            rank=0,
            xtx_inv_diag=np.zeros(0),
        )

    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    tol = rank_tol * s[0] if s.size else 0.0
    r = int(np.sum(s > tol))
    if r == 0:
        rss = float(y @ y)
        return LsqFit(np.zeros(p), y.copy(), np.zeros(n), rss / n, 0, np.zeros(p))

    uty = U[:, :r].T @ y
    coef = Vt[:r].T @ (uty / s[:r])
    fitted = U[:, :r] @ uty
    resid = y - fitted
    hat = np.einsum("ij,ij->i", U[:, :r], U[:, :r])
    rss = float(resid @ resid)
    sigma2 = rss / (n - r) if n > r else 0.0
    inv_diag = np.einsum("ij,ij->i", Vt[:r].T / s[:r], Vt[:r].T / s[:r])
    return LsqFit(coef, resid, hat, sigma2, r, inv_diag)


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection of v onto {w : w >= 0, sum w = 1} (sort algorithm)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("input must be a nonempty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("input must be finite")
    k = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, k + 1)
    rho = np.nonzero(u * idx > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def check_simplex(w, tol: float = 1e-10) -> np.ndarray:
    """Validate a weight vector: entries in [0, 1], summing to 1 within tol."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d vector")
    if np.any(w < -tol) or np.any(w > 1.0 + tol):
        raise ValueError("weights must lie in [0, 1]")
    if abs(float(w.sum()) - 1.0) > tol:
        raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    return w


def _spectral_bound(Q: np.ndarray, iters: int = 200, tol: float = 1e-12) -> float:
    """Power-iteration estimate of the largest eigenvalue of symmetric PSD Q."""
    k = Q.shape[0]
    v = 1.0 + np.arange(k) / max(k - 1, 1)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = Q @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= tol * max(1.0, nw):
            lam = nw
            break
        lam = nw
    return lam


def _qp_kkt_ok(Q, c, w, tol: float = 1e-6) -> bool:
    # KKT for min over the simplex: active coordinates share one gradient
    # value, inactive coordinates sit at or above it.
    g = Q @ w + c
    scale = max(1.0, float(np.max(np.abs(g))))
    active = w > 1e-10
    if not np.any(active):
        return False
    gstar = float(g[active] @ w[active]) / float(w[active].sum())
    if np.max(np.abs(g[active] - gstar)) > tol * scale:
        return False
    if np.any(g[~active] < gstar - tol * scale):
        return False
    return True


def _qp_face_finish(Q, c, w0):
    """Primal active-set solve on the simplex, started from a feasible point.

    Each step equality-solves the current face through its bordered KKT
    system. A face minimizer that leaves the nonnegative orthant is
    approached only up to the first zeroed coordinate (a strict descent
    step, so faces cannot repeat); once the face minimizer is feasible,
    the worst violated inactive coordinate enters. With the ridged,
    strictly convex Q this terminates at the certified global minimum;
    None is returned only on the safety cap or a failed solve.
    """
    k = Q.shape[0]
    w = np.maximum(np.asarray(w0, dtype=float), 0.0)
    total = float(w.sum())
    if total <= 0.0:
        return None
    w = w / total
    active = w > 1e-12
    scale = max(1.0, float(np.max(np.abs(Q @ w + c))))
    for _ in range(4 * k + 16):
        idx = np.nonzero(active)[0]
        m = idx.size
        if m == 0:
            return None
        kkt = np.empty((m + 1, m + 1))
        kkt[:m, :m] = Q[idx[:, None], idx]
        kkt[:m, m] = 1.0
        kkt[m, :m] = 1.0
        kkt[m, m] = 0.0
        rhs = np.concatenate([-c[idx], [1.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            return None
        wf = sol[:m]
        if float(np.min(wf)) < -1e-15:
            # Clip toward the face minimizer at the first zero crossing.
            cur = w[idx]
            delta = wf - cur
            dropping = delta < 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(dropping, cur / -delta, np.inf)
            alpha = min(float(np.min(steps)), 1.0)
            if not alpha > 0.0:
                return None
            w = np.zeros(k)
            w[idx] = np.maximum(cur + alpha * delta, 0.0)
            active = w > 1e-12
            continue
        cand = np.zeros(k)
        cand[idx] = wf
        g = Q @ cand + c
        gstar = -float(sol[m])
        viol = np.where(active, -np.inf, gstar - g)
        worst = int(np.argmax(viol))
        if viol[worst] > 1e-9 * scale:
            w = cand
            active[worst] = True
            continue
        return cand
    return None


def solve_simplex_qp(Q, c=None, max_iter: int = 100_000) -> np.ndarray:
    """Minimize 0.5 w'Qw + c'w over the probability simplex.

    Accelerated projected gradient with function-value restarts; the step
    size comes from a power-iteration bound on the largest eigenvalue. A
    ridge of 1e-10 tr(Q)/k is added to the diagonal so that duplicated
    candidates resolve deterministically toward equal weights.
    Convergence is declared once the objective decrease stays below 1e-10
    for 10 consecutive iterations and the KKT certificate holds.

    Parameters
    ----------
    Q : (k, k) symmetric positive semidefinite matrix (symmetrized here).
    c : (k,) linear term, defaults to zero.

    Raises
    ------
    ConvergenceError
        If the iteration cap is reached without a certified solution.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError("Q must be square")
    k = Q.shape[0]
    if c is None:
        c = np.zeros(k)
    c = np.asarray(c, dtype=float)
    if c.shape != (k,):
        raise ValueError(f"c has shape {c.shape}, expected ({k},)")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c))):
        raise ValueError("Q and c must be finite")
    if k == 1:
        return np.ones(1)

    Q = 0.5 * (Q + Q.T)
    trace = float(np.trace(Q))
    if trace <= 0.0:
        # Q is numerically zero: linear objective, split ties uniformly.
        w = (c == c.min()).astype(float)
        return w / w.sum()
    Qr = Q + (1e-10 * trace / k) * np.eye(k)

    lip = _spectral_bound(Qr) * 1.05
    step = 1.0 / lip

    def objective(w):
        return 0.5 * float(w @ (Qr @ w)) + float(c @ w)

    w = np.full(k, 1.0 / k)
    v = w.copy()
    t_mom = 1.0
    f_prev = objective(w)
    plateau = 0
    overshoots = 0
    for it in range(max_iter):
        w_prev = w
        w = project_to_simplex(v - step * (Qr @ v + c))
        f_new = objective(w)
        decrease = f_prev - f_new
        if decrease < 0.0:
            # Momentum overshoot: restart from the last accepted point.
            w, f_new = w_prev, f_prev
            v = w_prev.copy()
            t_mom = 1.0
            overshoots += 1
            if overshoots > 5:
                # The spectral bound was too optimistic; halve the step.
                step *= 0.5
                overshoots = 0
            decrease = 0.0
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
            v = w + ((t_mom - 1.0) / t_next) * (w - w_prev)
            t_mom = t_next
            overshoots = 0
        f_prev = f_new
        plateau = plateau + 1 if decrease < 1e-10 else 0
        if plateau >= 10 or (it + 1) % 200 == 0:
            # Try to finish exactly on the current active face; accept only
            # a certified KKT point.
            finished = _qp_face_finish(Qr, c, w)
            if finished is not None:
                f_fin = objective(finished)
                if f_fin <= f_prev + 1e-12 * max(1.0, abs(f_prev)) and _qp_kkt_ok(
                    Qr, c, finished
                ):
                    out = np.maximum(finished, 0.0)
                    return out / out.sum()
                if f_fin < f_prev:
                    w = finished
                    f_prev = f_fin
                    v = w.copy()
                    t_mom = 1.0
            if plateau >= 10:
                if _qp_kkt_ok(Qr, c, w):
                    out = np.maximum(w, 0.0)
                    return out / out.sum()
                plateau = 0
                t_mom = 1.0
                v = w.copy()
    raise ConvergenceError(
        f"simplex QP did not certify a solution within {max_iter} iterations"
    )


def solve_nnls(A, b, max_iter: int | None = None) -> np.ndarray:
    """Nonnegative least squares: minimize ||A x - b||^2 subject to x >= 0.

    Lawson-Hanson active set iteration with least squares subproblems.
    Satisfies the KKT conditions at convergence: the gradient is
    nonnegative on the zero set and complementary slackness holds.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.ndim != 1:
        raise ValueError("A must be 2-d and b 1-d")
    m, n = A.shape
    if m != b.shape[0]:
        raise ValueError(f"A has {m} rows but b has {b.shape[0]} entries")
    if max_iter is None:
        max_iter = 30 * max(n, 3)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b
    tol = 1e-11 * max(1.0, float(np.max(np.abs(w)))) if n else 0.0

    iters = 0
    while not passive.all():
        w = A.T @ (b - A @ x)
        w_masked = np.where(passive, -np.inf, w)
        j = int(np.argmax(w_masked))
        if w_masked[j] <= tol:
            break
        passive[j] = True
        while True:
            iters += 1
            if iters > max_iter:
                raise ConvergenceError("NNLS active-set iteration cap reached")
            s = np.zeros(n)
            s[passive], *_ = np.linalg.lstsq(A[:, passive], b, rcond=None)
            if np.all(s[passive] > 0.0):
                x = s
                break
            # Step toward s only as far as feasibility allows.
            neg = passive & (s <= 0.0)
            alpha = float(np.min(x[neg] / (x[neg] - s[neg])))
            x = x + alpha * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
    return x


# Wichura's AS 241 (PPND16) rational approximations for the inverse
# standard normal CDF; double precision over the full open interval.
_PPND_A = (
    3.3871328727963666080e0, 1.3314166789178437745e2,
    1.9715909503065514427e3, 1.3731693765509461125e4,
    4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_PPND_B = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
    5.3941960214247511077e3, 2.1213794301586595867e4,
    3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_PPND_C = (
    1.42343711074968357734e0, 4.63033784615654529590e0,
    5.76949722146069140550e0, 3.64784832476320460504e0,
    1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_PPND_D = (
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
    6.89767334985100004550e-1, 1.48103976427480074590e-1,
    1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_PPND_E = (
    6.65790464350110377720e0, 5.46378491116411436990e0,
    1.78482653991729133580e0, 2.96560571828504891230e-1,
    2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_PPND_F = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
    1.48753612908506148525e-2, 7.86869131145613259100e-4,
    1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _poly(coefs, x):
    acc = np.full_like(x, coefs[-1])
    for c in reversed(coefs[:-1]):
        acc = acc * x + c
    return acc


def norm_quantile(p):
    """Inverse standard normal CDF (AS 241, |error| far below 1e-8).

    Accepts scalars or arrays; p = 0 and p = 1 map to -inf and +inf,
    values outside [0, 1] raise.
    """
    arr = np.asarray(p, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
        raise ValueError("probabilities must lie in [0, 1]")
    out = np.empty_like(arr)
    q = arr - 0.5

    central = np.abs(q) <= 0.425
    if np.any(central):
        r = 0.180625 - q[central] * q[central]
        out[central] = q[central] * _poly(_PPND_A, r) / _poly(_PPND_B, r)

    tail = ~central
    if np.any(tail):
        pt = np.minimum(arr[tail], 1.0 - arr[tail])
        x = np.empty_like(pt)
        interior = pt > 0.0
        with np.errstate(divide="ignore"):
            r = np.sqrt(-np.log(np.where(interior, pt, 0.5)))
        near = interior & (r <= 5.0)
        far = interior & (r > 5.0)
        x[near] = _poly(_PPND_C, r[near] - 1.6) / _poly(_PPND_D, r[near] - 1.6)
        x[far] = _poly(_PPND_E, r[far] - 5.0) / _poly(_PPND_F, r[far] - 5.0)
        x[~interior] = np.inf
        out[tail] = np.where(q[tail] < 0.0, -x, x)

    return float(out[0]) if scalar else out
