"""Candidate model sets over a common covariate pool.

Nested and all-subsets enumeration, per-model least squares fits with
Gaussian information criteria, bidirectional stepwise AIC search, and a
small CSV reader for regression datasets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import LsqFit, solve_least_squares

__all__ = [
    "Dataset",
    "FittedModel",
    "ModelSpec",
    "design_matrix",
    "enumerate_all_subsets",
    "enumerate_nested",
    "fit_candidates",
    "gaussian_log_likelihood",
    "read_dataset",
    "stepwise_aic",
    "write_dataset",
]

SUBSET_CAP = 20  # refuse all-subsets enumeration beyond 2^20 models


@dataclass(frozen=True)
class Dataset:
    """Response vector plus covariate matrix with named columns."""

    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "names", tuple(self.names))
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if self.y.ndim != 1 or self.y.shape[0] != self.X.shape[0]:
            raise ValueError("y and X must agree on the number of rows")
        if len(self.names) != self.X.shape[1]:
            raise ValueError("one name per covariate column required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("covariate names must be unique")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise ValueError("dataset entries must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """A candidate model: a subset of covariate columns, intercept always kept."""

    covariate_indices: tuple[int, ...]
    include_intercept: bool = True

    def __post_init__(self):
        idx = tuple(int(i) for i in self.covariate_indices)
        object.__setattr__(self, "covariate_indices", idx)
        if len(set(idx)) != len(idx):
            raise ValueError("covariate indices must be unique")
        if any(i < 0 for i in idx):
            raise ValueError("covariate indices must be nonnegative")


@dataclass(frozen=True)
class FittedModel:
    """A candidate model fit with its Gaussian information criteria."""

    spec: ModelSpec
    fit: LsqFit
    loglik: float
    aic: float
    bic: float
    n_params: int
    variance_floored: bool = field(default=False, compare=False)


def enumerate_nested(p: int) -> list[ModelSpec]:
    """Nested sequence: intercept only, then {1}, {1,2}, ..., {1..p} (p+1 specs)."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    return [ModelSpec(tuple(range(j))) for j in range(p + 1)]


def enumerate_all_subsets(p: int, cap: int = SUBSET_CAP) -> list[ModelSpec]:
    """All 2^p covariate subsets in binary-counting order, intercept always kept."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    if p > cap:
        raise ValueError(
            f"all-subsets enumeration of p={p} covariates means 2^{p} models; "
            f"refusing beyond cap={cap}"
        )
    specs = []
    for m in range(1 << p):
        specs.append(ModelSpec(tuple(j for j in range(p) if m >> j & 1)))
    return specs


def design_matrix(data: Dataset, spec: ModelSpec) -> np.ndarray:
    """Design matrix for a candidate model: intercept column plus its covariates."""
    cols = [np.ones((data.n, 1))] if spec.include_intercept else []
    if spec.covariate_indices:
        idx = list(spec.covariate_indices)
        if max(idx) >= data.p:
            raise ValueError(f"covariate index {max(idx)} out of bounds for p={data.p}")
        cols.append(data.X[:, idx])
    if not cols:
        return np.zeros((data.n, 0))
    return np.hstack(cols)


def gaussian_log_likelihood(rss: float, n: int) -> tuple[float, bool]:
    """Gaussian log likelihood at the ML variance RSS/n, floored at 1e-300.

    Returns (loglik, floored); the flag marks a degenerate zero-RSS fit.
    """
    sigma2 = rss / n
    floored = sigma2 < 1e-300
    if floored:
        sigma2 = 1e-300
    return -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0), floored


def _criteria(fit: LsqFit, spec: ModelSpec, n: int) -> tuple[float, float, float, int, bool]:
    rss = float(fit.residuals @ fit.residuals)
    loglik, floored = gaussian_log_likelihood(rss, n)
    # slopes + intercept + variance parameter
    n_params = len(spec.covariate_indices) + (1 if spec.include_intercept else 0) + 1
    aic = -2.0 * loglik + 2.0 * n_params
    bic = -2.0 * loglik + n_params * math.log(n)
    return loglik, aic, bic, n_params, floored


def fit_candidates(data: Dataset, specs: list[ModelSpec]) -> list[FittedModel]:
    """Fit every candidate model and attach AIC/BIC."""
    out = []
    for spec in specs:
        fit = solve_least_squares(design_matrix(data, spec), data.y)
        loglik, aic, bic, n_params, floored = _criteria(fit, spec, data.n)
        out.append(FittedModel(spec, fit, loglik, aic, bic, n_params, floored))
    return out


def _gram_aic(G, g, yty, n, idx):
    """AIC of the model with design columns idx, from precomputed Gram pieces."""
    Gs = G[np.ix_(idx, idx)]
    gs = g[idx]
    try:
        L = np.linalg.cholesky(Gs)
    except np.linalg.LinAlgError:
        return None
    beta = np.linalg.solve(L.T, np.linalg.solve(L, gs))
    rss = max(yty - float(beta @ gs), 0.0)
    loglik, _ = gaussian_log_likelihood(rss, n)
    # idx includes the intercept column; +1 for the variance parameter
    return -2.0 * loglik + 2.0 * (len(idx) + 1)


def stepwise_aic(data: Dataset) -> FittedModel:
    """Bidirectional stepwise search by AIC, starting from the full model.

    At each step the single covariate deletion or addition with the best
    AIC is taken if it strictly improves; the first local minimum wins.
    Deterministic given the dataset.
    """
    if data.p == 0:
        return fit_candidates(data, [ModelSpec(())])[0]
    if data.n <= data.p + 2:
        raise ValueError(
            f"stepwise search needs n > p + 2, got n={data.n}, p={data.p}"
        )

    D = np.hstack([np.ones((data.n, 1)), data.X])
    G = D.T @ D
    g = D.T @ data.y
    yty = float(data.y @ data.y)

    def aic_of(cov_set):
        idx = np.array([0] + [j + 1 for j in sorted(cov_set)], dtype=int)
        val = _gram_aic(G, g, yty, data.n, idx)
        if val is None:
            # Collinear subset: fall back to the rank-aware solver.
            fit = solve_least_squares(D[:, idx], data.y)
            rss = float(fit.residuals @ fit.residuals)
            loglik, _ = gaussian_log_likelihood(rss, data.n)
            return -2.0 * loglik + 2.0 * (len(idx) + 1)
        return val

    current = set(range(data.p))
    current_aic = aic_of(current)
    while True:
        moves = [("drop", j) for j in sorted(current)]
        moves += [("add", j) for j in sorted(set(range(data.p)) - current)]
        best_move, best_aic = None, current_aic
        for kind, j in moves:
            trial = current - {j} if kind == "drop" else current | {j}
            a = aic_of(trial)
            if a < best_aic:
                best_move, best_aic = (kind, j), a
        if best_move is None:
            break
        kind, j = best_move
        current = current - {j} if kind == "drop" else current | {j}
        current_aic = best_aic

    return fit_candidates(data, [ModelSpec(tuple(sorted(current)))])[0]


def read_dataset(path, response: str | None = None) -> Dataset:
    """Read a headered CSV into a Dataset.

    The response is the named column when given, otherwise the first
    column; every other column becomes a covariate.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ValueError(f"{path}: duplicate column names")
    if response is None:
        r_idx = 0
    else:
        if response not in header:
            raise ValueError(f"{path}: no column named {response!r}")
        r_idx = header.index(response)
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    try:
        values = np.array([[float(v) for v in row] for row in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if values.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    keep = [j for j in range(len(header)) if j != r_idx]
    return Dataset(values[:, r_idx], values[:, keep], tuple(header[j] for j in keep))


def write_dataset(data: Dataset, path, response_name: str = "y") -> None:
    """Write a Dataset as a headered CSV, response first."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([response_name, *data.names])
        for i in range(data.n):
            writer.writerow([repr(float(data.y[i]))] + [repr(float(v)) for v in data.X[i]])
