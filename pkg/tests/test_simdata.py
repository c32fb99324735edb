import math

import numpy as np
import pytest

from modelavg.gformula import ALWAYS, THRESHOLD, rule_paths
from modelavg.rng import make_rng
from modelavg.simdata import (
    LINEAR_COEFFICIENTS,
    MarginalSpec,
    STUDY_MARGINALS,
    clayton_sample,
    gen_forecast_study,
    gen_linear_study,
    panel_from_csv,
    panel_to_csv,
    simulate_longitudinal,
    transform_marginals,
    truncated_normal,
)


class TestClayton:
    def test_kendall_tau_moderate_dependence(self):
        # random concordance pairs estimate tau; closed form is 1/(1+2) = 1/3
        rng = make_rng(100)
        U = clayton_sample(10**6, 2, 1.0, rng)
        i = rng.integers(0, 10**6, size=10**6)
        j = rng.integers(0, 10**6, size=10**6)
        keep = i != j
        sign = np.sign((U[i[keep], 0] - U[j[keep], 0]) * (U[i[keep], 1] - U[j[keep], 1]))
        tau = float(sign.mean())
        assert abs(tau - 1.0 / 3.0) < 0.01

    def test_near_comonotone_limit(self):
        rng = make_rng(101)
        U = clayton_sample(20000, 2, 20.0, rng)
        ranks = np.argsort(np.argsort(U, axis=0), axis=0).astype(float)
        rho = np.corrcoef(ranks[:, 0], ranks[:, 1])[0, 1]
        assert rho > 0.95

    def test_marginals_uniform_ks(self):
        rng = make_rng(102)
        U = clayton_sample(10**5, 3, 1.0, rng)
        crit = 1.6276 / math.sqrt(10**5)  # 1% asymptotic critical value
        for j in range(3):
            u = np.sort(U[:, j])
            grid = np.arange(1, 10**5 + 1) / 10**5
            ks = max(float(np.max(grid - u)), float(np.max(u - (grid - 1 / 10**5))))
            assert ks < crit

    def test_open_interval_and_errors(self):
        rng = make_rng(103)
        U = clayton_sample(5000, 4, 0.5, rng)
        assert np.all(U > 0.0) and np.all(U < 1.0)
        with pytest.raises(ValueError):
            clayton_sample(10, 2, 0.0, rng)


class TestMarginals:
    def test_normal_median(self):
        U = np.full((1, 1), 0.5)
        out = transform_marginals(U, [MarginalSpec("normal", 0.0, 1.0)])
        assert out[0, 0] == 0.0

    def test_exponential_median(self):
        U = np.full((1, 1), 0.5)
        out = transform_marginals(U, [MarginalSpec("exponential", 1.0)])
        assert out[0, 0] == pytest.approx(math.log(2.0))

    def test_lognormal_mean(self):
        rng = make_rng(104)
        U = rng.random((10**6, 1))
        out = transform_marginals(U, [MarginalSpec("lognormal", 0.0, 0.5)])
        assert abs(out.mean() - math.exp(0.125)) < 0.005

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MarginalSpec("normal", 0.0, -1.0)
        with pytest.raises(ValueError):
            MarginalSpec("exponential", 0.0)
        with pytest.raises(ValueError):
            MarginalSpec("cauchy")
        with pytest.raises(ValueError):
            transform_marginals(np.ones((2, 2)) * 0.5, [MarginalSpec("normal")])


class TestRegressionStudies:
    def test_linear_study_composition(self):
        rng = make_rng(105)
        data, mu = gen_linear_study(5000, rng)
        assert LINEAR_COEFFICIENTS.tolist() == [0, 0, 1, 2, 3, 3, 2, 1, 0.5, 0]
        assert mu == pytest.approx(data.X @ LINEAR_COEFFICIENTS)
        resid_sd = float(np.std(data.y - mu))
        assert resid_sd == pytest.approx(math.exp(2.0), rel=0.05)

    def test_linear_study_deterministic(self):
        a, mu_a = gen_linear_study(50, make_rng(7, 3))
        b, mu_b = gen_linear_study(50, make_rng(7, 3))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(mu_a, mu_b)

    def test_forecast_mean_function(self):
        rng = make_rng(106)
        data, mu = gen_forecast_study(2000, rng)
        X = data.X
        expect = -5 + 0.5 * X[:, 1] + 1.5 * X[:, 5] + 1.5 * X[:, 8] + X[:, 5] * X[:, 8] + X[:, 1] ** 2
        assert mu == pytest.approx(expect)

    def test_forecast_noise_variance(self):
        rng = make_rng(107)
        data, mu = gen_forecast_study(10**6, rng)
        assert np.var(data.y - mu) == pytest.approx(math.exp(3.0), rel=0.01)

    def test_marginal_kinds(self):
        kinds = [spec.kind for spec in STUDY_MARGINALS]
        assert kinds == ["normal"] * 4 + ["lognormal"] * 3 + ["exponential"] * 3


class TestTruncatedNormal:
    def test_degenerate_sd_returns_mean(self):
        rng = make_rng(108)
        assert truncated_normal(1.7, 0.0, (-5, 5), (-10, -3, 3, 10), rng) == 1.7

    def test_forced_lower_tail(self):
        rng = make_rng(109)
        out = truncated_normal(
            np.full(2000, -100.0), 1.0, (0.0, 1.0), (0.2, 0.4, 2.0, 3.0), rng
        )
        assert np.all((out >= 0.2) & (out <= 0.4))

    def test_tail_intervals_validated(self):
        rng = make_rng(110)
        with pytest.raises(ValueError):
            truncated_normal(0.0, 1.0, (-1, 1), (0.5, 0.1, 2, 3), rng)


class TestLongitudinalPanel:
    def test_baseline_frequency(self):
        panel = simulate_longitudinal(10**6, 0, make_rng(111))
        assert abs(panel.v[:, 0].mean() - 4392 / 5826) < 0.005

    def test_marker_truncation_contract(self):
        panel = simulate_longitudinal(30000, 6, make_rng(112))
        assert np.all(panel.l1 >= 0.0)
        assert np.all((panel.l2 >= 0.03) & (panel.l2 <= 0.8))

    def test_observational_treatment_monotone(self):
        panel = simulate_longitudinal(20000, 6, make_rng(113))
        assert np.all(np.diff(panel.a, axis=1) >= 0)

    def test_intervention_forces_rule_and_no_censoring(self):
        for rule in (ALWAYS, THRESHOLD):
            panel = simulate_longitudinal(5000, 6, make_rng(114), intervention=rule)
            assert np.all(panel.c == 0.0)
            assert np.all(panel.a[:, 0] == 0.0)
            assert np.array_equal(panel.a, rule_paths(rule, panel))

    def test_bitwise_reproducible(self):
        a = simulate_longitudinal(500, 6, make_rng(115, 2))
        b = simulate_longitudinal(500, 6, make_rng(115, 2))
        for field in ("v", "l1", "l2", "l3", "a", "c", "y"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_uncensored_through(self):
        panel = simulate_longitudinal(3000, 6, make_rng(116))
        m5 = panel.uncensored_through(5)
        m6 = panel.uncensored_through(6)
        assert np.all(m6 <= m5)
        assert m6.sum() > 0.8 * panel.n  # censoring is rare in this process

    def test_csv_roundtrip(self, tmp_path):
        panel = simulate_longitudinal(40, 4, make_rng(117))
        path = tmp_path / "panel.csv"
        panel_to_csv(panel, path)
        back = panel_from_csv(path)
        assert back.horizon == 4
        assert np.array_equal(back.subject_ids, panel.subject_ids)
        assert back.v == pytest.approx(panel.v)
        for i in range(panel.n):
            for t in range(5):
                if panel.uncensored_through(t)[i]:
                    assert back.y[i, t] == pytest.approx(panel.y[i, t])
                    assert back.l1[i, t] == pytest.approx(panel.l1[i, t])
        # records after censoring are absent
        censored = ~panel.uncensored_through(4)
        if censored.any():
            i = int(np.nonzero(censored)[0][0])
            t_first = int(np.argmax(panel.c[i] == 1.0))
            assert np.isnan(back.y[i, t_first])
