import numpy as np
import pytest

from modelavg.kernel import check_simplex, solve_least_squares
from modelavg.models import Dataset, ModelSpec, enumerate_nested
from modelavg.optimal import (
    candidate_bundle,
    default_lambda_sequence,
    jma_fit,
    lae_fit,
    lasso_fit,
    lasso_path,
    loo_cv_criterion,
    loo_residuals,
    mallows_criterion,
    mma_fit,
)
from modelavg.rng import kfold_split, make_rng


def toy_dataset(n=50, p=3, seed=0, beta=(1.0, 0.0, 0.5), noise=0.5):
    rng = make_rng(seed)
    X = rng.normal(size=(n, p))
    y = X @ np.asarray(beta) + noise * rng.normal(size=n)
    return Dataset(y, X, tuple(f"x{j}" for j in range(1, p + 1)))


class TestCandidateBundle:
    def test_prefix_fast_path_matches_direct_fits(self):
        data = toy_dataset(n=40, p=4, seed=3, beta=(1, 0, 0.5, 0))
        bundle = candidate_bundle(data, enumerate_nested(4))
        for j in range(5):
            design = np.column_stack([np.ones(data.n), data.X[:, :j]])
            fit = solve_least_squares(design, data.y)
            assert bundle.residuals[:, j] == pytest.approx(fit.residuals, abs=1e-9)
            assert bundle.hat_diag[:, j] == pytest.approx(fit.hat_diag, abs=1e-9)
            assert bundle.ranks[j] == fit.rank
            assert bundle.coefficients[j, : j + 1] == pytest.approx(
                fit.coefficients, abs=1e-8
            )

    def test_duplicate_column_rank_detection(self):
        rng = make_rng(4)
        x = rng.normal(size=30)
        X = np.column_stack([x, x, rng.normal(size=30)])
        data = Dataset(x * 2 + rng.normal(size=30), X, ("a", "b", "c"))
        bundle = candidate_bundle(data, enumerate_nested(3))
        assert bundle.ranks.tolist() == [1, 2, 2, 3]


class TestMMA:
    def test_single_candidate(self):
        data = toy_dataset()
        spec = ModelSpec((0, 1, 2))
        fit = mma_fit(data, specs=[spec])
        assert fit.weights == pytest.approx([1.0])
        direct = solve_least_squares(
            np.column_stack([np.ones(data.n), data.X]), data.y
        )
        assert fit.coefficients == pytest.approx(direct.coefficients, abs=1e-9)

    def test_two_candidates_match_grid_search(self):
        data = toy_dataset(n=50, p=2, seed=21, beta=(0.7, 0.0), noise=0.5)
        specs = [ModelSpec((0,)), ModelSpec((0, 1))]
        fit = mma_fit(data, specs=specs)
        bundle = candidate_bundle(data, specs)
        solver_obj = mallows_criterion(bundle, fit.weights)
        grid_best = min(
            mallows_criterion(bundle, np.array([a, 1.0 - a]))
            for a in np.arange(0.0, 1.0 + 5e-4, 1e-3)
        )
        assert solver_obj <= grid_best + 1e-4
        assert abs(solver_obj - grid_best) <= 1e-4

    def test_duplicated_candidates_equal_weights(self):
        data = toy_dataset(seed=22)
        spec = ModelSpec((0, 1))
        fit = mma_fit(data, specs=[spec, spec, ModelSpec((0,))])
        assert fit.weights[0] == pytest.approx(fit.weights[1], abs=1e-6)
        single = mma_fit(data, specs=[spec, ModelSpec((0,))])
        pred_a = fit.predict(data.X)
        pred_b = single.predict(data.X)
        assert pred_a == pytest.approx(pred_b, abs=1e-6)

    def test_never_worse_than_best_single_candidate(self):
        for seed in range(25):
            data = toy_dataset(n=45, p=4, seed=100 + seed, beta=(1, 0.3, 0, 0))
            specs = enumerate_nested(4)
            fit = mma_fit(data, specs=specs)
            check_simplex(fit.weights, tol=1e-8)
            bundle = candidate_bundle(data, specs)
            obj = mallows_criterion(bundle, fit.weights)
            k = len(specs)
            corners = [mallows_criterion(bundle, np.eye(k)[i]) for i in range(k)]
            assert obj <= min(corners) + 1e-8 * (1 + abs(min(corners)))

    def test_needs_estimable_full_model(self):
        data = toy_dataset(n=4, p=4, seed=1, beta=(1.0, 0.0, 0.0, 0.0))
        with pytest.raises(ValueError):
            mma_fit(data)

    def test_all_subsets_mode(self):
        data = toy_dataset(n=60, p=3, seed=23)
        fit = mma_fit(data, all_subsets=True)
        assert fit.weights.shape == (8,)
        check_simplex(fit.weights, tol=1e-8)


class TestJMA:
    def test_loo_shortcut_equals_explicit_refits(self):
        data = toy_dataset(n=30, p=3, seed=31, beta=(1.0, 0.0, 0.4))
        specs = enumerate_nested(3)  # k = 4 candidates
        bundle = candidate_bundle(data, specs)
        loo = loo_residuals(bundle)
        for j, spec in enumerate(specs):
            design = np.column_stack([np.ones(data.n), data.X[:, : len(spec.covariate_indices)]])
            for i in range(data.n):
                mask = np.arange(data.n) != i
                fit_i = solve_least_squares(design[mask], data.y[mask])
                pred_i = design[i] @ fit_i.coefficients
                assert abs((data.y[i] - pred_i) - loo[i, j]) < 1e-8

    def test_single_candidate(self):
        data = toy_dataset()
        fit = jma_fit(data, specs=[ModelSpec((0, 1))])
        assert fit.weights == pytest.approx([1.0])

    def test_identical_candidates(self):
        data = toy_dataset(seed=32)
        spec = ModelSpec((0, 2))
        fit = jma_fit(data, specs=[spec, spec])
        assert fit.weights == pytest.approx([0.5, 0.5], abs=1e-6)
        single = jma_fit(data, specs=[spec])
        assert fit.predict(data.X) == pytest.approx(single.predict(data.X), abs=1e-8)

    def test_leverage_one_rejected(self):
        # two observations, full model: saturated fit has leverage 1
        data = Dataset(np.array([1.0, 2.0]), np.array([[0.3], [0.9]]), ("x1",))
        with pytest.raises(ValueError, match="leverage"):
            jma_fit(data)

    def test_never_worse_than_best_single_candidate(self):
        for seed in range(25):
            data = toy_dataset(n=40, p=4, seed=200 + seed, beta=(0.5, 0, 0.2, 0))
            specs = enumerate_nested(4)
            fit = jma_fit(data, specs=specs)
            check_simplex(fit.weights, tol=1e-8)
            loo = loo_residuals(candidate_bundle(data, specs))
            obj = loo_cv_criterion(loo, fit.weights)
            k = len(specs)
            corners = [loo_cv_criterion(loo, np.eye(k)[i]) for i in range(k)]
            assert obj <= min(corners) + 1e-8 * (1 + abs(min(corners)))


class TestLassoPath:
    def test_lambda_zero_matches_ols(self):
        data = toy_dataset(n=60, p=4, seed=41, beta=(1, -0.5, 0, 0.2))
        ols = solve_least_squares(
            np.column_stack([np.ones(data.n), data.X]), data.y
        ).coefficients
        assert lasso_fit(data, 0.0) == pytest.approx(ols, abs=1e-6)

    def test_full_shrinkage_above_lambda_max(self):
        data = toy_dataset(seed=42)
        grid = default_lambda_sequence(data, 10)
        coef = lasso_fit(data, grid[0] * 1.5)
        assert np.all(coef[1:] == 0.0)
        assert coef[0] == pytest.approx(float(data.y.mean()))

    def test_path_zero_at_lambda_max(self):
        data = toy_dataset(seed=43)
        path = lasso_path(data, default_lambda_sequence(data))
        assert np.max(np.abs(path.coefficients[0, 1:])) <= 1e-12

    def test_single_covariate_soft_threshold(self):
        rng = make_rng(44)
        x = rng.normal(size=80)
        x = (x - x.mean()) / x.std()
        y = 0.8 * x + 0.3 * rng.normal(size=80)
        data = Dataset(y, x[:, None], ("x1",))
        xy = float(x @ (y - y.mean()))
        xx = float(x @ x)
        lam = abs(xy)  # strictly between 0 and lambda_max = 2|xy|
        expect = np.sign(xy) * max(abs(xy) - lam / 2.0, 0.0) / xx
        coef = lasso_fit(data, lam)
        assert coef[1] == pytest.approx(expect, abs=1e-9)

    def test_orthonormal_lambda_max(self):
        # a single standardized covariate with x'(y - ybar) = 3 shuts off at 6
        x = np.array([1.0, -1.0, 1.0, -1.0])
        y = 0.75 * x + 0.5
        data = Dataset(y, x[:, None], ("x1",))
        grid = default_lambda_sequence(data, 2)
        assert grid[0] == pytest.approx(6.0)

    def test_grid_endpoints_and_shape(self):
        data = toy_dataset(seed=45)
        grid2 = default_lambda_sequence(data, 2)
        assert grid2.shape == (2,)
        assert grid2[-1] == pytest.approx(1e-4)
        grid100 = default_lambda_sequence(data, 100)
        assert grid100.shape == (100,)
        assert np.all(np.diff(grid100) < 0)

    def test_constant_covariates_rejected(self):
        data = Dataset(np.arange(6, dtype=float), np.ones((6, 2)), ("a", "b"))
        with pytest.raises(ValueError):
            default_lambda_sequence(data)

    def test_negative_lambda_rejected(self):
        data = toy_dataset()
        with pytest.raises(ValueError):
            lasso_fit(data, -1.0)

    def test_duplicate_columns_supported(self):
        rng = make_rng(46)
        x = rng.normal(size=50)
        X = np.column_stack([x, x, rng.normal(size=50)])
        data = Dataset(2 * x + 0.1 * rng.normal(size=50), X, ("a", "b", "c"))
        coef = lasso_fit(data, 0.0)
        pred = coef[0] + data.X @ coef[1:]
        direct = solve_least_squares(np.column_stack([np.ones(50), data.X]), data.y)
        assert pred == pytest.approx(data.y - direct.residuals, abs=1e-8)


class TestLAE:
    def test_single_lambda(self):
        data = toy_dataset(seed=51)
        fit = lae_fit(data, lambdas=[0.5], folds=5)
        assert fit.weights == pytest.approx([1.0])

    def test_duplicated_lambda_prediction_unchanged(self):
        data = toy_dataset(seed=52)
        one = lae_fit(data, lambdas=[0.7], folds=5, seed=9)
        two = lae_fit(data, lambdas=[0.7, 0.7], folds=5, seed=9)
        assert two.predict(data.X) == pytest.approx(one.predict(data.X), abs=1e-8)

    def test_strong_signal_prefers_no_shrinkage(self):
        favored = 0
        for seed in range(100):
            rng = make_rng(7000 + seed)
            X = rng.normal(size=(80, 2))
            y = X @ np.array([3.0, 2.0]) + 0.2 * rng.normal(size=80)
            data = Dataset(y, X, ("x1", "x2"))
            lam_max = default_lambda_sequence(data, 2)[0]
            fit = lae_fit(data, lambdas=[0.0, lam_max], folds=5, seed=seed)
            favored += fit.weights[0] > 0.9
        assert favored / 100 > 0.95

    def test_ocv_never_worse_than_single_lambda(self):
        for seed in range(10):
            data = toy_dataset(n=60, p=3, seed=600 + seed, beta=(1.0, 0.0, 0.3))
            lambdas = default_lambda_sequence(data, 12)
            fold = kfold_split(data.n, 5, seed)
            cv = np.empty((data.n, 12))
            for f in range(5):
                train = fold != f
                sub = Dataset(data.y[train], data.X[train], data.names)
                coefs = lasso_path(sub, lambdas).coefficients
                preds = coefs[:, 0][None, :] + data.X[~train] @ coefs[:, 1:].T
                cv[~train] = data.y[~train, None] - preds
            fit = lae_fit(data, lambdas=lambdas, folds=5, seed=seed)
            check_simplex(fit.weights, tol=1e-8)
            obj = loo_cv_criterion(cv, fit.weights)
            corners = [loo_cv_criterion(cv, np.eye(12)[i]) for i in range(12)]
            assert obj <= min(corners) + 1e-8 * (1 + abs(min(corners)))

    def test_fold_count_validation(self):
        data = toy_dataset(n=8)
        with pytest.raises(ValueError):
            lae_fit(data, lambdas=[0.1], folds=20)
