import math

import numpy as np
import pytest

from semisub.diagnostics import (
    auc,
    coverage_study,
    credible_interval,
    hdi,
    lppd,
    moments_table,
    posterior_moment_diff,
    sample_moment,
    wilson_interval,
)
from semisub.inference import PosteriorSamples
from semisub.model import LikelihoodHead, MlpArchitecture, SsrModel


def _samples(draws, columns):
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    return PosteriorSamples(draws=draws, columns=columns,
                            log_post=np.zeros(draws.shape[0]),
                            chain=np.zeros(draws.shape[0], dtype=int))


class TestLppd:
    def _linear_model(self):
        # zero-hidden-layer net: flat params are (theta, slope, bias)
        return SsrModel(p=1, arch=MlpArchitecture(1, ()), head=LikelihoodHead("normal", 1.0))

    def test_single_sample_degenerate_average(self):
        model = self._linear_model()
        s = _samples([[0.0, 0.0, 0.0]], ["theta_1", "w_1", "w_2"])
        y, X, U = np.array([0.0]), np.zeros((1, 1)), np.zeros((1, 1))
        value, se = lppd(s, model, None, y, X, U)
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi))
        assert se == 0.0

    def test_duplicated_samples_identical(self):
        model = self._linear_model()
        rng = np.random.default_rng(3)
        draws = rng.standard_normal((4, 3))
        y, X, U = rng.standard_normal(6), rng.standard_normal((6, 1)), rng.standard_normal((6, 1))
        a = lppd(_samples(draws, ["theta_1", "w_1", "w_2"]), model, None, y, X, U)
        b = lppd(_samples(np.vstack([draws, draws]), ["theta_1", "w_1", "w_2"]),
                 model, None, y, X, U)
        assert a[0] == pytest.approx(b[0], rel=1e-12)

    def test_matches_manual_log_sum_exp(self):
        # hand computation: 3 draws, 2 points, normal head sigma = 1
        model = self._linear_model()
        draws = np.array([[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0], [1.0, 0.0, 0.0]])
        y = np.array([0.2, -0.1])
        X = np.array([[1.0], [2.0]])
        U = np.zeros((2, 1))
        mus = X @ draws[:, :1].T  # n x S
        dens = np.exp(-0.5 * np.log(2 * np.pi) - 0.5 * (y[:, None] - mus) ** 2)
        per_point = np.log(dens.mean(axis=1))
        expected = per_point.mean()
        expected_se = per_point.std() / np.sqrt(2)
        got, got_se = lppd(_samples(draws, ["theta_1", "w_1", "w_2"]), model, None, y, X, U)
        assert got == pytest.approx(expected, rel=1e-10)
        assert got_se == pytest.approx(expected_se, rel=1e-10)

    def test_order_invariance(self):
        model = self._linear_model()
        rng = np.random.default_rng(5)
        draws = rng.standard_normal((5, 3))
        y, X, U = rng.standard_normal(4), rng.standard_normal((4, 1)), rng.standard_normal((4, 1))
        cols = ["theta_1", "w_1", "w_2"]
        a = lppd(_samples(draws, cols), model, None, y, X, U)[0]
        b = lppd(_samples(draws[::-1], cols), model, None, y, X, U)[0]
        perm = rng.permutation(4)
        c = lppd(_samples(draws, cols), model, None, y[perm], X[perm], U[perm])[0]
        assert a == pytest.approx(b) == pytest.approx(c)

    def test_empty_inputs_rejected(self):
        model = self._linear_model()
        with pytest.raises(ValueError):
            lppd(_samples(np.zeros((0, 3)), ["theta_1", "w_1", "w_2"]), model, None,
                 np.array([1.0]), np.ones((1, 1)), np.ones((1, 1)))


class TestMoments:
    def test_known_sample(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert sample_moment(x, 1) == pytest.approx(2.5)
        assert sample_moment(x, 2) == pytest.approx(np.sqrt(1.25))
        assert sample_moment(x, 3) == pytest.approx(0.0, abs=1e-12)
        # standardized fourth central moment: E[z^4] - 3
        z = (x - 2.5) / np.sqrt(1.25)
        assert sample_moment(x, 4) == pytest.approx(np.mean(z ** 4) - 3.0)

    def test_identical_sets_diff_zero(self):
        rng = np.random.default_rng(1)
        a = _samples(rng.standard_normal((100, 1)), ["theta_1"])
        for m in (1, 2, 3, 4):
            assert posterior_moment_diff(a, a, "theta_1", m) == 0.0

    def test_shift_changes_only_mean(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((5000, 1))
        a = _samples(x, ["theta_1"])
        b = _samples(x + 1.0, ["theta_1"])
        assert posterior_moment_diff(a, b, "theta_1", 1) == pytest.approx(-1.0, abs=1e-9)
        assert posterior_moment_diff(a, b, "theta_1", 2) == pytest.approx(0.0, abs=1e-12)

    def test_missing_param_rejected(self):
        a = _samples(np.zeros((3, 1)), ["theta_1"])
        with pytest.raises(KeyError):
            posterior_moment_diff(a, a, "theta_9", 1)

    def test_moments_table_keys(self):
        a = _samples(np.random.default_rng(0).standard_normal((50, 2)),
                     ["theta_1", "theta_2"])
        table = moments_table(a, ["theta_1", "theta_2"])
        assert set(table["theta_1"]) == {"mean", "sd", "skewness", "excess_kurtosis"}


class TestCredibleInterval:
    def test_linear_interpolation_oracle(self):
        lo, hi = credible_interval(np.arange(1.0, 101.0), 0.5)
        assert lo == pytest.approx(25.75)
        assert hi == pytest.approx(75.25)

    def test_near_full_mass_approaches_range(self):
        x = np.linspace(-2, 2, 1001)
        lo, hi = credible_interval(x, 0.999)
        assert lo == pytest.approx(-2.0, abs=0.01)
        assert hi == pytest.approx(2.0, abs=0.01)

    def test_degenerate_draws(self):
        lo, hi = credible_interval(np.full(10, 3.14), 0.9)
        assert lo == hi == pytest.approx(3.14)

    def test_width_nondecreasing_in_alpha(self):
        x = np.random.default_rng(9).standard_normal(500)
        widths = [np.diff(credible_interval(x, a))[0] for a in np.linspace(0.05, 0.95, 19)]
        assert all(w2 >= w1 - 1e-12 for w1, w2 in zip(widths, widths[1:]))

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            credible_interval([1.0, 2.0], 1.5)
        with pytest.raises(ValueError):
            credible_interval([1.0], 0.5)


class TestCoverage:
    def test_wilson_oracle(self):
        lo, hi = wilson_interval(25, 50)
        assert lo == pytest.approx(0.366, abs=0.001)
        assert hi == pytest.approx(0.634, abs=0.001)

    def test_all_hits_boundary(self):
        rng = np.random.default_rng(4)
        runs = [(rng.standard_normal(200), 0.0) for _ in range(20)]
        table = coverage_study(runs, [0.99])
        row = table.row(0.99)
        assert row["empirical"] == 1.0
        assert row["wilson_high"] == 1.0

    def test_self_calibrated_simulation(self):
        # theta drawn from the same distribution as the draws: nominal coverage
        rng = np.random.default_rng(8)
        runs = [(rng.standard_normal(2000), rng.standard_normal()) for _ in range(500)]
        table = coverage_study(runs, [0.5])
        row = table.row(0.5)
        assert row["wilson_low"] <= 0.5 <= row["wilson_high"]

    def test_self_calibration_across_alpha_grid(self):
        rng = np.random.default_rng(12)
        runs = [(rng.standard_normal(2000), rng.standard_normal()) for _ in range(400)]
        alphas = np.arange(0.1, 0.95, 0.1)
        table = coverage_study(runs, alphas)
        ok = sum(r["wilson_low"] <= r["alpha"] <= r["wilson_high"] for r in table.rows)
        assert ok >= math.ceil(0.95 * len(alphas)) - 1

    def test_too_few_runs(self):
        with pytest.raises(ValueError):
            coverage_study([(np.zeros(10), 0.0)], [0.5])


class TestHdi:
    def test_normal_draws(self):
        rng = np.random.default_rng(10)
        lo, hi = hdi(rng.standard_normal(50000), 0.95)
        assert lo == pytest.approx(-1.96, abs=0.1)
        assert hi == pytest.approx(1.96, abs=0.1)

    def test_uniform_width(self):
        rng = np.random.default_rng(11)
        lo, hi = hdi(rng.random(50000), 0.5)
        assert hi - lo == pytest.approx(0.5, abs=0.03)

    def test_single_draw_rejected(self):
        with pytest.raises(ValueError):
            hdi([1.0], 0.95)

    def test_hdi_no_wider_than_equal_tailed(self):
        rng = np.random.default_rng(13)
        x = rng.gamma(2.0, size=20000)  # skewed, so the two differ
        for mass in (0.5, 0.8, 0.95):
            h = np.diff(hdi(x, mass))[0]
            e = np.diff(credible_interval(x, mass))[0]
            assert h <= e + 1e-9


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0

    def test_pair_enumeration_oracle(self):
        labels = [0, 0, 1, 1]
        scores = [0.1, 0.4, 0.35, 0.8]
        # enumerate all positive/negative pairs by hand
        wins = 0.0
        for sp in (0.35, 0.8):
            for sn in (0.1, 0.4):
                wins += 1.0 if sp > sn else (0.5 if sp == sn else 0.0)
        assert wins / 4 == 0.75
        assert auc(labels, scores) == pytest.approx(0.75)

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(14)
        labels = rng.integers(0, 2, 20000)
        scores = rng.random(20000)
        assert auc(labels, scores) == pytest.approx(0.5, abs=0.02)

    def test_invariance_under_monotone_transform(self):
        rng = np.random.default_rng(15)
        labels = rng.integers(0, 2, 500)
        labels[0], labels[1] = 0, 1
        scores = rng.standard_normal(500)
        a = auc(labels, scores)
        assert auc(labels, np.exp(scores)) == pytest.approx(a, rel=1e-12)
        assert auc(labels, 3 * scores - 7) == pytest.approx(a, rel=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc([1, 1, 1], [0.1, 0.2, 0.3])
