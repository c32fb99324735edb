"""Criterion-based model averaging.

Exponential AIC and BIC weights over a candidate set, the two classical
variance formulas for averaged coefficients (Buckland-style and the
total-variance decomposition), and normal-quantile interval estimates.
Also assembles the plain OLS and stepwise-selection fits so the
simulation harness can treat all five estimators uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import check_simplex, norm_quantile
from .models import Dataset, FittedModel, ModelSpec, enumerate_all_subsets, fit_candidates, stepwise_aic

__all__ = [
    "AveragedFit",
    "average_coefficients",
    "bayes_variance",
    "bma_fit",
    "buckland_se",
    "criterion_weights",
    "fma_fit",
    "ms_fit",
    "normal_interval",
    "ols_fit",
]


@dataclass(frozen=True)
class AveragedFit:
    """A point estimate with weights, standard errors, and interval estimates.

    ``coefficients`` runs over the full covariate list with the intercept
    first; covariates excluded from a candidate model contribute zero to
    the average.
    """

    method: str
    weights: np.ndarray
    coefficients: np.ndarray
    std_errors: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    names: tuple[str, ...]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.coefficients.shape[0] - 1:
            raise ValueError("prediction matrix has the wrong number of columns")
        return self.coefficients[0] + X @ self.coefficients[1:]


def criterion_weights(criteria) -> np.ndarray:
    """Weights proportional to exp(-criterion/2), after subtracting the minimum.

    The shift makes the computation stable and leaves the weights exactly
    invariant to adding a constant to every criterion value.
    """
    crit = np.asarray(criteria, dtype=float)
    if crit.ndim != 1 or crit.size == 0:
        raise ValueError("criteria must be a nonempty 1-d vector")
    if not np.all(np.isfinite(crit)):
        raise ValueError("criteria must be finite")
    w = np.exp(-0.5 * (crit - crit.min()))
    return w / w.sum()


def average_coefficients(models: list[FittedModel], weights, p: int) -> np.ndarray:
    """Weighted coefficient average over candidates, zero-filled for excluded terms.

    Returns a vector of length p + 1 with the intercept first.
    """
    w = check_simplex(weights, tol=1e-8)
    if len(models) != w.shape[0]:
        raise ValueError("one weight per candidate model required")
    B, _ = _coefficient_tables(models, p)
    return w @ B


def _coefficient_tables(models: list[FittedModel], p: int):
    """Per-candidate coefficient and variance tables in the full (p+1) space."""
    k = len(models)
    B = np.zeros((k, p + 1))
    V = np.zeros((k, p + 1))
    for i, m in enumerate(models):
        var = m.fit.sigma2 * m.fit.xtx_inv_diag
        offset = 0
        if m.spec.include_intercept:
            B[i, 0] = m.fit.coefficients[0]
            V[i, 0] = var[0]
            offset = 1
        for j, col in enumerate(m.spec.covariate_indices):
            B[i, 1 + col] = m.fit.coefficients[offset + j]
            V[i, 1 + col] = var[offset + j]
    return B, V


def buckland_se(betas_j, vars_j, weights) -> float:
    """Model-averaged standard error sum_k w_k sqrt(var_k + (beta_k - mean)^2)."""
    betas = np.asarray(betas_j, dtype=float)
    variances = np.asarray(vars_j, dtype=float)
    w = check_simplex(weights, tol=1e-8)
    if np.any(variances < 0):
        raise ValueError("variances must be nonnegative")
    bbar = float(w @ betas)
    return float(w @ np.sqrt(variances + (betas - bbar) ** 2))


def bayes_variance(betas_j, vars_j, weights) -> float:
    """Total-variance decomposition: within-model plus between-model spread."""
    betas = np.asarray(betas_j, dtype=float)
    variances = np.asarray(vars_j, dtype=float)
    w = check_simplex(weights, tol=1e-8)
    if np.any(variances < 0):
        raise ValueError("variances must be nonnegative")
    bbar = float(w @ betas)
    return float(w @ variances + w @ (betas - bbar) ** 2)


def normal_interval(estimate: float, se: float, level: float) -> tuple[float, float]:
    """estimate +/- z_{(1+level)/2} * se with the internally computed quantile."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    if se < 0.0:
        raise ValueError("standard error must be nonnegative")
    z = norm_quantile(0.5 * (1.0 + level))
    return estimate - z * se, estimate + z * se


def _assemble(method, weights, coef, ses, level, names) -> AveragedFit:
    lower = np.empty_like(coef)
    upper = np.empty_like(coef)
    for j in range(coef.shape[0]):
        lower[j], upper[j] = normal_interval(float(coef[j]), float(ses[j]), level)
    return AveragedFit(
        method=method,
        weights=np.asarray(weights, dtype=float),
        coefficients=coef,
        std_errors=np.asarray(ses, dtype=float),
        ci_lower=lower,
        ci_upper=upper,
        level=level,
        names=("intercept", *names),
    )


def _criterion_fit(data: Dataset, specs, method: str, level: float) -> AveragedFit:
    if specs is None:
        specs = enumerate_all_subsets(data.p)
    models = fit_candidates(data, specs)
    crit = [m.aic if method == "FMA" else m.bic for m in models]
    w = criterion_weights(crit)
    B, V = _coefficient_tables(models, data.p)
    coef = w @ B
    if method == "FMA":
        ses = np.array([buckland_se(B[:, j], V[:, j], w) for j in range(data.p + 1)])
    else:
        ses = np.sqrt([bayes_variance(B[:, j], V[:, j], w) for j in range(data.p + 1)])
    return _assemble(method, w, coef, ses, level, data.names)


def fma_fit(data: Dataset, specs: list[ModelSpec] | None = None, level: float = 0.95) -> AveragedFit:
    """Averaging with exponential-AIC weights and Buckland standard errors.

    Defaults to the all-subsets candidate set.
    """
    return _criterion_fit(data, specs, "FMA", level)


def bma_fit(data: Dataset, specs: list[ModelSpec] | None = None, level: float = 0.95) -> AveragedFit:
    """Averaging with exponential-BIC weights and total-variance standard errors."""
    return _criterion_fit(data, specs, "BMA", level)


def ols_fit(data: Dataset, level: float = 0.95) -> AveragedFit:
    """Full-model least squares with classical standard errors."""
    model = fit_candidates(data, [ModelSpec(tuple(range(data.p)))])[0]
    coef = model.fit.coefficients
    ses = np.sqrt(model.fit.sigma2 * model.fit.xtx_inv_diag)
    return _assemble("OLS", np.ones(1), coef, ses, level, data.names)


def ms_fit(data: Dataset, level: float = 0.95) -> AveragedFit:
    """Stepwise-AIC model selection reported as a degenerate one-model average.

    Excluded covariates get coefficient 0 with a zero-width interval, the
    naive post-selection convention.
    """
    model = stepwise_aic(data)
    B, V = _coefficient_tables([model], data.p)
    return _assemble("MS", np.ones(1), B[0], np.sqrt(V[0]), level, data.names)
