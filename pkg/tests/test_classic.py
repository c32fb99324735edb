import math

import numpy as np
import pytest

from modelavg.classic import (
    average_coefficients,
    bayes_variance,
    bma_fit,
    buckland_se,
    criterion_weights,
    fma_fit,
    ms_fit,
    normal_interval,
    ols_fit,
)
from modelavg.models import Dataset, ModelSpec, fit_candidates
from modelavg.rng import make_rng


def toy_dataset(n=50, p=3, seed=0, beta=(1.0, 0.0, 0.5), noise=1.0):
    rng = make_rng(seed)
    X = rng.normal(size=(n, p))
    y = X @ np.asarray(beta) + noise * rng.normal(size=n)
    return Dataset(y, X, tuple(f"x{j}" for j in range(1, p + 1)))


class TestCriterionWeights:
    def test_single_model(self):
        assert criterion_weights([12.3]) == pytest.approx([1.0])

    def test_two_equal(self):
        assert criterion_weights([5.0, 5.0]) == pytest.approx([0.5, 0.5])

    def test_direct_evaluation(self):
        w = criterion_weights([100.0, 102.0])
        e = math.exp(-1.0)
        assert w == pytest.approx([1 / (1 + e), e / (1 + e)], abs=1e-12)
        assert w == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_shift_invariance_exact(self):
        crit = np.array([310.0, 305.5, 320.25])
        w1 = criterion_weights(crit)
        w2 = criterion_weights(crit + 1234.5)
        assert np.array_equal(w1, w2)

    def test_errors(self):
        with pytest.raises(ValueError):
            criterion_weights([])
        with pytest.raises(ValueError):
            criterion_weights([1.0, np.inf])


class TestAverageCoefficients:
    def test_single_model_padding(self):
        data = toy_dataset()
        models = fit_candidates(data, [ModelSpec((0,))])
        coef = average_coefficients(models, [1.0], data.p)
        assert coef.shape == (4,)
        assert coef[2] == 0.0 and coef[3] == 0.0
        assert coef[1] == pytest.approx(models[0].fit.coefficients[1])

    def test_zero_fill_rule(self):
        data = toy_dataset(seed=5)
        models = fit_candidates(data, [ModelSpec((0,)), ModelSpec(())])
        coef = average_coefficients(models, [0.5, 0.5], data.p)
        assert coef[1] == pytest.approx(0.5 * models[0].fit.coefficients[1])

    def test_three_model_hand_sum(self):
        data = toy_dataset(seed=6)
        specs = [ModelSpec((0,)), ModelSpec((1,)), ModelSpec((0, 1))]
        models = fit_candidates(data, specs)
        w = np.array([0.2, 0.3, 0.5])
        coef = average_coefficients(models, w, data.p)
        by_hand = np.zeros(4)
        for wk, m in zip(w, models):
            by_hand[0] += wk * m.fit.coefficients[0]
            for j, col in enumerate(m.spec.covariate_indices):
                by_hand[1 + col] += wk * m.fit.coefficients[1 + j]
        assert coef == pytest.approx(by_hand, abs=1e-12)


class TestVarianceFormulas:
    def test_buckland_collapses_when_identical(self):
        se = buckland_se([1.3, 1.3, 1.3], [0.04, 0.04, 0.04], [0.2, 0.5, 0.3])
        assert se == pytest.approx(0.2)

    def test_buckland_hand_value(self):
        se = buckland_se([1.0, 0.0], [0.1, 0.0], [0.5, 0.5])
        assert se == pytest.approx(0.5 * math.sqrt(0.35) + 0.5 * 0.5, abs=1e-12)
        assert se == pytest.approx(0.5458, abs=1e-4)

    def test_buckland_single_model_reduction(self):
        assert buckland_se([2.0, 9.9], [0.25, 4.0], [1.0, 0.0]) == pytest.approx(0.5)

    def test_buckland_dominates_within_term(self):
        rng = make_rng(8)
        for trial in range(100):
            k = int(rng.integers(1, 6))
            betas = rng.normal(size=k)
            variances = rng.uniform(0, 2, size=k)
            w = rng.dirichlet(np.ones(k))
            assert buckland_se(betas, variances, w) >= float(w @ np.sqrt(variances)) - 1e-12

    def test_bayes_identical(self):
        assert bayes_variance([1.0, 1.0], [0.3, 0.3], [0.4, 0.6]) == pytest.approx(0.3)

    def test_bayes_hand_value(self):
        assert bayes_variance([1.0, 0.0], [0.1, 0.0], [0.5, 0.5]) == pytest.approx(0.30)

    def test_bayes_degenerate(self):
        assert bayes_variance([3.0, -1.0], [0.2, 0.7], [0.0, 1.0]) == pytest.approx(0.7)

    def test_bayes_at_least_within(self):
        rng = make_rng(9)
        for trial in range(100):
            k = int(rng.integers(1, 6))
            betas = rng.normal(size=k)
            variances = rng.uniform(0, 2, size=k)
            w = rng.dirichlet(np.ones(k))
            assert bayes_variance(betas, variances, w) >= float(w @ variances) - 1e-12

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            buckland_se([0.0], [-0.1], [1.0])
        with pytest.raises(ValueError):
            bayes_variance([0.0], [-0.1], [1.0])


class TestNormalInterval:
    def test_standard_quantile(self):
        lo, hi = normal_interval(0.0, 1.0, 0.95)
        assert lo == pytest.approx(-1.959964, abs=1e-6)
        assert hi == pytest.approx(1.959964, abs=1e-6)

    def test_zero_width(self):
        assert normal_interval(5.0, 0.0, 0.95) == (5.0, 5.0)

    def test_half_level(self):
        lo, hi = normal_interval(1.0, 2.0, 0.5)
        assert lo == pytest.approx(1 - 0.674490 * 2, abs=1e-5)
        assert hi == pytest.approx(1 + 0.674490 * 2, abs=1e-5)

    def test_invalid_level(self):
        with pytest.raises(ValueError):
            normal_interval(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            normal_interval(0.0, -1.0, 0.9)


class TestAssembledFits:
    def test_coincident_candidates_match_single_fit(self):
        data = toy_dataset(seed=11)
        spec = ModelSpec((0, 1, 2))
        fma = fma_fit(data, specs=[spec, spec, spec])
        bma = bma_fit(data, specs=[spec, spec, spec])
        ols = ols_fit(data)
        assert fma.coefficients == pytest.approx(ols.coefficients, abs=1e-10)
        assert bma.coefficients == pytest.approx(ols.coefficients, abs=1e-10)
        assert fma.std_errors == pytest.approx(ols.std_errors, abs=1e-10)
        assert bma.std_errors == pytest.approx(ols.std_errors, abs=1e-10)
        assert fma.ci_lower == pytest.approx(ols.ci_lower, abs=1e-9)

    def test_ols_classical_se(self):
        data = toy_dataset(seed=12)
        fit = ols_fit(data)
        D = np.column_stack([np.ones(data.n), data.X])
        resid = data.y - D @ np.linalg.solve(D.T @ D, D.T @ data.y)
        s2 = float(resid @ resid) / (data.n - 4)
        se = np.sqrt(s2 * np.diag(np.linalg.inv(D.T @ D)))
        assert fit.std_errors == pytest.approx(se, abs=1e-9)

    def test_ms_excluded_terms_degenerate(self):
        data = toy_dataset(n=300, p=3, seed=13, beta=(2.0, 0.0, 0.0), noise=0.5)
        fit = ms_fit(data)
        assert fit.method == "MS"
        # the strong covariate survives; any excluded one has a point interval
        assert fit.coefficients[1] != 0.0
        for j in range(1, 4):
            if fit.coefficients[j] == 0.0:
                assert fit.std_errors[j] == 0.0
                assert fit.ci_lower[j] == fit.ci_upper[j] == 0.0

    def test_interval_brackets_estimate(self):
        data = toy_dataset(seed=14)
        for fit in (fma_fit(data), bma_fit(data), ols_fit(data), ms_fit(data)):
            assert np.all(fit.ci_lower <= fit.coefficients + 1e-12)
            assert np.all(fit.coefficients <= fit.ci_upper + 1e-12)
