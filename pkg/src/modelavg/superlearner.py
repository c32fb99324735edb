"""Cross-validation stacking over a registry of regression learners.

Each learner produces an affine predictor in an (optionally expanded)
feature space; the meta-step combines their out-of-fold predictions with
nonnegative weights summing to one. Learner failures on a fold fall back
to the training-fold mean so long Monte Carlo runs never abort on one
singular fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .classic import ms_fit
from .kernel import ConvergenceError, solve_least_squares, solve_nnls, solve_simplex_qp
from .models import Dataset
from .optimal import default_lambda_sequence, jma_fit, lae_fit, lasso_path, mma_fit
from .rng import child_seed, kfold_split

__all__ = [
    "CAUSAL_LEARNERS",
    "CAUSAL_PLUS_LEARNERS",
    "LearnerSpec",
    "LevelOneMatrix",
    "SL_LEARNERS",
    "SL_PLUS_LEARNERS",
    "SuperLearnerFit",
    "cv_level_one",
    "expand_features",
    "fit_learner",
    "fit_super_learner",
    "meta_weights",
    "parse_learners",
    "sl_predict",
]

log = logging.getLogger(__name__)

EXPANSIONS = ("none", "interactions", "squares")
OMA_BASES = ("MMA", "JMA", "LAE")
SIMPLE_BASES = ("OLS", "MEAN", "STEP_AIC", "LASSO_CV", "GLM_INTERACT", "GLM_INTERACT_AIC")


def expand_features(X: np.ndarray, expansion: str) -> np.ndarray:
    """Feature expansion: none, all pairwise interactions, or squares.

    Added columns follow the originals in deterministic order:
    lexicographic pairs (i, j), i < j, for interactions; column order for
    squares.
    """
    X = np.asarray(X, dtype=float)
    if expansion == "none":
        return X
    if expansion == "interactions":
        p = X.shape[1]
        pairs = [X[:, i] * X[:, j] for i in range(p) for j in range(i + 1, p)]
        return np.column_stack([X, *pairs]) if pairs else X
    if expansion == "squares":
        return np.hstack([X, X * X])
    raise ValueError(f"unknown expansion {expansion!r}")


@dataclass(frozen=True)
class LearnerSpec:
    """A registry entry: base algorithm plus feature expansion."""

    base: str
    expansion: str = "none"

    def __post_init__(self):
        if self.base not in SIMPLE_BASES + OMA_BASES:
            raise ValueError(f"unknown learner base {self.base!r}")
        if self.expansion not in EXPANSIONS:
            raise ValueError(f"unknown expansion {self.expansion!r}")
        if self.base in SIMPLE_BASES and self.expansion != "none":
            raise ValueError(
                f"{self.base} is registered without expansions; got {self.expansion!r}"
            )

    @property
    def name(self) -> str:
        return self.base if self.expansion == "none" else f"{self.base}+{self.expansion}"

    @staticmethod
    def parse(name: str) -> "LearnerSpec":
        base, _, expansion = name.partition("+")
        return LearnerSpec(base.strip().upper(), (expansion.strip().lower() or "none"))


def parse_learners(names) -> tuple[LearnerSpec, ...]:
    return tuple(LearnerSpec.parse(n) for n in names)


def _oma_trio() -> tuple[LearnerSpec, ...]:
    return tuple(
        LearnerSpec(base, expansion) for base in OMA_BASES for expansion in EXPANSIONS
    )


SL_LEARNERS = tuple(LearnerSpec(b) for b in SIMPLE_BASES)
SL_PLUS_LEARNERS = SL_LEARNERS + _oma_trio()
CAUSAL_LEARNERS = tuple(LearnerSpec(b) for b in ("OLS", "MEAN", "STEP_AIC", "GLM_INTERACT"))
CAUSAL_PLUS_LEARNERS = CAUSAL_LEARNERS + _oma_trio()


@dataclass(frozen=True)
class FittedLearner:
    """An affine predictor in an expanded feature space."""

    spec: LearnerSpec
    feature_expansion: str
    intercept: float
    slopes: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = expand_features(np.asarray(X, dtype=float), self.feature_expansion)
        if Z.shape[1] != self.slopes.shape[0]:
            raise ValueError("prediction matrix has the wrong number of columns")
        return self.intercept + Z @ self.slopes


def _lasso_cv_coefficients(data: Dataset, folds: int, seed: int) -> np.ndarray:
    """LASSO with the tuning value chosen by k-fold cross validation."""
    grid = default_lambda_sequence(data)
    folds = min(folds, data.n)
    fold = kfold_split(data.n, folds, seed)
    sq_err = np.zeros(grid.shape[0])
    for f in range(folds):
        train = fold != f
        sub = Dataset(data.y[train], data.X[train], data.names)
        coefs = lasso_path(sub, grid).coefficients
        preds = coefs[:, 0][None, :] + data.X[~train] @ coefs[:, 1:].T
        sq_err += ((data.y[~train, None] - preds) ** 2).sum(axis=0)
    best = int(np.argmin(sq_err))  # ties resolve to the largest lambda
    return lasso_path(data, grid).coefficients[best]


def fit_learner(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, seed: int = 0) -> FittedLearner:
    """Fit one registry learner on raw features; expansions happen here."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    base = spec.base

    if base == "MEAN":
        return FittedLearner(spec, "none", float(y.mean()), np.zeros(X.shape[1]))

    expansion = spec.expansion
    if base in ("GLM_INTERACT", "GLM_INTERACT_AIC"):
        expansion = "interactions"
    Z = expand_features(X, expansion)
    names = tuple(f"z{j}" for j in range(Z.shape[1]))
    data = Dataset(y, Z, names)

    if base in ("OLS", "GLM_INTERACT"):
        fit = solve_least_squares(np.hstack([np.ones((Z.shape[0], 1)), Z]), y)
        coef = fit.coefficients
    elif base in ("STEP_AIC", "GLM_INTERACT_AIC"):
        coef = ms_fit(data).coefficients
    elif base == "LASSO_CV":
        coef = _lasso_cv_coefficients(data, folds=10, seed=seed)
    elif base == "MMA":
        coef = mma_fit(data).coefficients
    elif base == "JMA":
        coef = jma_fit(data).coefficients
    elif base == "LAE":
        coef = lae_fit(data, seed=seed).coefficients
    else:
        raise ValueError(f"unknown learner base {base!r}")
    return FittedLearner(spec, expansion, float(coef[0]), np.asarray(coef[1:]))


@dataclass(frozen=True)
class LevelOneMatrix:
    """Out-of-fold learner predictions, one column per learner."""

    predictions: np.ndarray
    fold_assignment: np.ndarray


class SuperLearnerError(RuntimeError):
    pass


_FIT_FAILURES = (ConvergenceError, ValueError, np.linalg.LinAlgError, FloatingPointError)


def cv_level_one(
    data: Dataset,
    learners,
    k: int = 10,
    seed: int = 0,
) -> LevelOneMatrix:
    """Cross-validated predictions: entry (i, j) comes from a fit that never saw i's fold."""
    learners = tuple(learners)
    if not learners:
        raise ValueError("at least one learner required")
    fold = kfold_split(data.n, k, seed)
    Z = np.empty((data.n, len(learners)))
    for f in range(k):
        train = fold != f
        if not np.any(train):
            raise SuperLearnerError(f"fold {f} leaves an empty training set")
        failures = 0
        for j, spec in enumerate(learners):
            try:
                fitted = fit_learner(spec, data.X[train], data.y[train], child_seed(seed, f, j))
                Z[~train, j] = fitted.predict(data.X[~train])
                if not np.all(np.isfinite(Z[~train, j])):
                    raise ValueError("non-finite predictions")
            except _FIT_FAILURES as exc:
                failures += 1
                log.warning("learner %s failed on fold %d (%s); using fold mean",
                            spec.name, f, exc)
                Z[~train, j] = float(data.y[train].mean())
        if failures == len(learners):
            raise SuperLearnerError(f"every learner failed on fold {f}")
    return LevelOneMatrix(Z, fold)


def meta_weights(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Nonnegative least squares weights on the level-one matrix, normalized to one.

    An all-zero NNLS solution (every learner anticorrelated with y) falls
    back to uniform weights with a logged warning.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != y.shape[0]:
        raise ValueError("level-one matrix and response must agree on rows")
    x = solve_nnls(Z, y)
    total = float(x.sum())
    if total <= 0.0:
        log.warning("NNLS meta-step returned all zeros; falling back to uniform weights")
        return np.full(Z.shape[1], 1.0 / Z.shape[1])
    return x / total


@dataclass(frozen=True)
class SuperLearnerFit:
    """Fitted stack: registry, simplex meta-weights, and full-data refits."""

    learners: tuple[LearnerSpec, ...]
    meta_weights: np.ndarray
    refit_models: tuple[FittedLearner, ...]
    level_one: LevelOneMatrix
    n_features: int


def fit_super_learner(
    data: Dataset,
    learners,
    k: int = 10,
    seed: int = 0,
) -> SuperLearnerFit:
    """Cross-validate the registry, solve the meta-step, refit on all data.

    The meta-weights are the NNLS-then-normalize solution refined by a
    simplex-constrained quadratic program, so the stacked in-sample risk
    is never worse than any single learner column.
    """
    learners = tuple(learners)
    lvl = cv_level_one(data, learners, k=k, seed=seed)
    Z = lvl.predictions
    w = meta_weights(Z, data.y)
    try:
        w = solve_simplex_qp(2.0 * (Z.T @ Z), -2.0 * (Z.T @ data.y))
    except ConvergenceError as exc:
        log.warning("meta-weight refinement did not converge (%s); keeping NNLS weights", exc)

    refits = []
    for j, spec in enumerate(learners):
        try:
            refits.append(fit_learner(spec, data.X, data.y, child_seed(seed, k, j)))
        except _FIT_FAILURES as exc:
            log.warning("learner %s failed on the full data (%s); using mean", spec.name, exc)
            refits.append(FittedLearner(spec, "none", float(data.y.mean()), np.zeros(data.p)))
    return SuperLearnerFit(learners, w, tuple(refits), lvl, data.p)


def sl_predict(fit: SuperLearnerFit, X_new: np.ndarray) -> np.ndarray:
    """Weighted combination of the full-data learner predictions."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim != 2 or X_new.shape[1] != fit.n_features:
        raise ValueError(
            f"expected {fit.n_features} feature columns, got {X_new.shape}"
        )
    out = np.zeros(X_new.shape[0])
    for w, learner in zip(fit.meta_weights, fit.refit_models):
        if w != 0.0:
            out += w * learner.predict(X_new)
    return out
