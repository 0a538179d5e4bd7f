import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labeluq.bounds import PRED_VAR_FLOOR, VAR_MIN
from labeluq.losses import (
    GaussianPrediction,
    expected_nll,
    kld_loss,
    loss_gradients,
    mc_expected_nll,
    nll_loss,
    sample_label,
)

from oracles import finite_difference_gradient, kl_gaussians_quadrature


def rand_config(rng):
    """Random (pred, label, label_var) with moderate separations."""
    pred = GaussianPrediction(
        mean=rng.uniform(-1, 1, 6), var=rng.uniform(0.05, 5.0, 6)
    )
    label = rng.uniform(-1, 1, 6)
    label_var = rng.uniform(VAR_MIN, 1.0, 6)
    return pred, label, label_var


class TestGaussianPrediction:
    def test_variance_floored(self):
        p = GaussianPrediction(np.zeros(6), np.full(6, 1e-12))
        assert np.all(p.var == PRED_VAR_FLOOR)

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            GaussianPrediction(np.zeros(5), np.ones(5))


class TestNllLoss:
    def test_zero_at_match_with_unit_variance(self):
        p = GaussianPrediction(np.arange(6.0), np.ones(6))
        lv = nll_loss(p, np.arange(6.0))
        assert lv.per_variable == pytest.approx(np.zeros(6), abs=1e-15)
        assert lv.total == 0.0

    def test_log_term_only(self):
        p = GaussianPrediction(np.zeros(6), np.full(6, math.e))
        lv = nll_loss(p, np.zeros(6))
        assert lv.per_variable == pytest.approx(np.full(6, 0.5))

    def test_hand_value(self):
        p = GaussianPrediction(np.zeros(6), np.full(6, 0.5))
        lv = nll_loss(p, np.full(6, 2.0))
        assert lv.per_variable[0] == pytest.approx(3.65343, abs=1e-5)

    def test_total_is_sum(self, rng):
        for _ in range(50):
            pred, label, _ = rand_config(rng)
            lv = nll_loss(pred, label)
            assert lv.total == lv.per_variable.sum()


class TestKldLoss:
    def test_matched_distributions_leave_half(self):
        var = np.full(6, 0.3)
        p = GaussianPrediction(np.ones(6), var)
        lv = kld_loss(p, np.ones(6), var)
        assert lv.per_variable == pytest.approx(np.full(6, 0.5))

    def test_hand_value(self):
        p = GaussianPrediction(np.zeros(6), np.full(6, 0.2))
        lv = kld_loss(p, np.ones(6), np.full(6, 0.1))
        assert lv.per_variable[0] == pytest.approx(3.09657, abs=1e-5)

    def test_equals_integrated_kl_plus_half(self, rng):
        for _ in range(100):
            pred, label, label_var = rand_config(rng)
            lv = kld_loss(pred, label, label_var)
            for k in range(6):
                true_kl = kl_gaussians_quadrature(
                    label[k], label_var[k], pred.mean[k], pred.var[k]
                )
                assert lv.per_variable[k] - 0.5 == pytest.approx(true_kl, abs=1e-6)

    def test_minimizer_is_label_distribution(self, rng):
        label = rng.uniform(-1, 1, 6)
        label_var = rng.uniform(0.01, 0.5, 6)
        at_min = kld_loss(GaussianPrediction(label, label_var), label, label_var).total
        for _ in range(100):
            other = GaussianPrediction(
                label + rng.normal(0, 0.3, 6), label_var * rng.uniform(0.5, 2.0, 6)
            )
            assert kld_loss(other, label, label_var).total >= at_min - 1e-12
        g = loss_gradients("kld", GaussianPrediction(label, label_var), label, label_var)
        assert g == pytest.approx(np.zeros(12), abs=1e-9)


class TestLossGradients:
    def test_nll_matches_finite_differences(self, rng):
        for _ in range(100):
            pred, label, _ = rand_config(rng)
            g = loss_gradients("nll", pred, label)

            def f(x):
                p = GaussianPrediction(x[:6], x[6:])
                return nll_loss(p, label).total

            x0 = np.concatenate([pred.mean, pred.var])
            fd = finite_difference_gradient(f, x0, step=1e-6)
            assert g == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_kld_matches_finite_differences(self, rng):
        for _ in range(100):
            pred, label, label_var = rand_config(rng)
            g = loss_gradients("kld", pred, label, label_var)

            def f(x):
                p = GaussianPrediction(x[:6], x[6:])
                return kld_loss(p, label, label_var).total

            x0 = np.concatenate([pred.mean, pred.var])
            fd = finite_difference_gradient(f, x0, step=1e-6)
            assert g == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_degeneration_to_nll(self, rng):
        for _ in range(100):
            pred, label, _ = rand_config(rng)
            g_kld = loss_gradients("kld", pred, label, np.full(6, 1e-12))
            g_nll = loss_gradients("nll", pred, label)
            assert np.max(np.abs(g_kld - g_nll)) < 1e-10

    def test_nll_stationary_point(self):
        label = np.array([0.3, -0.2, 0.1, 0.0, 0.5, -0.4])
        pred = GaussianPrediction(label, np.full(6, 0.7))
        g = loss_gradients("nll", pred, label)
        # at mean match, d/d mean = 0; d/d var = 1/(2 var) > 0
        assert g[:6] == pytest.approx(np.zeros(6), abs=1e-12)
        assert np.all(g[6:] > 0)

    def test_unknown_kind(self):
        p = GaussianPrediction(np.zeros(6), np.ones(6))
        with pytest.raises(ValueError):
            loss_gradients("l2", p, np.zeros(6))
        with pytest.raises(ValueError):
            loss_gradients("kld", p, np.zeros(6))


class TestSampleLabel:
    def test_zero_variance_exact(self):
        y = np.array([1.0, -2.0, 0.5, 3.0, -0.1, 0.0])
        assert np.array_equal(sample_label(y, np.zeros(6), seed=7), y)

    def test_deterministic_per_seed(self):
        y = np.zeros(6)
        v = np.ones(6)
        a = sample_label(y, v, seed=42)
        b = sample_label(y, v, seed=42)
        c = sample_label(y, v, seed=43)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_mean_concentration(self):
        y = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        v = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
        n = 100_000
        draws = sample_label(np.tile(y, (n, 1)), np.tile(v, (n, 1)), seed=77)
        err = np.abs(draws.mean(axis=0) - y)
        bound = 4.0 * np.sqrt(v) / math.sqrt(n)
        assert np.all(err < bound)

    def test_variance_concentration(self):
        y = np.zeros(6)
        v = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
        n = 100_000
        draws = sample_label(np.tile(y, (n, 1)), np.tile(v, (n, 1)), seed=99)
        sample_var = draws.var(axis=0)
        assert sample_var == pytest.approx(v, rel=0.05)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            sample_label(np.zeros(6), np.full(6, -1.0), seed=0)


class TestMcExpectedNll:
    def test_zero_variance_equals_exact_loss(self, rng):
        pred, label, _ = rand_config(rng)
        assert mc_expected_nll(pred, label, np.zeros(6), 1000, seed=1) == nll_loss(
            pred, label
        ).total

    def test_matched_distributions_analytic(self):
        var = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
        label = np.arange(6.0)
        pred = GaussianPrediction(label, var)
        # E_p[nll] with p = q: sum of (log var)/2 + 1/2 per variable
        assert expected_nll(pred, label, var) == pytest.approx(
            float(np.sum(0.5 * np.log(var) + 0.5))
        )

    def test_estimator_matches_analytic_within_3se(self, rng):
        pred, label, label_var = rand_config(rng)
        n = 1_000_000
        est = mc_expected_nll(pred, label, label_var, n, seed=5)
        analytic = expected_nll(pred, label, label_var)
        a = label - pred.mean
        var_total = float(
            np.sum((a**2 * label_var + label_var**2 / 2.0) / pred.var**2)
        )
        se = math.sqrt(var_total / n)
        assert abs(est - analytic) < 3.0 * se

    def test_gap_to_kld_is_constant_in_prediction(self, rng):
        # E_p[nll] - (kld - 1/2) must depend only on the label variance
        label = rng.uniform(-1, 1, 6)
        label_var = rng.uniform(0.01, 0.9, 6)
        gaps = []
        for _ in range(20):
            pred = GaussianPrediction(rng.uniform(-2, 2, 6), rng.uniform(0.01, 4.0, 6))
            gap = expected_nll(pred, label, label_var) - (
                kld_loss(pred, label, label_var).total - 6 * 0.5
            )
            gaps.append(gap)
        assert max(gaps) - min(gaps) < 1e-9
        # and the gap equals sum of (1 + log var)/2
        assert gaps[0] == pytest.approx(float(np.sum(0.5 * (1 + np.log(label_var)))))

    def test_requires_samples(self, rng):
        pred, label, label_var = rand_config(rng)
        with pytest.raises(ValueError):
            mc_expected_nll(pred, label, label_var, 0)


@settings(max_examples=50, deadline=None)
@given(data=st.data())
def test_loss_totals_are_exact_sums(data):
    mean = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=6, max_size=6)))
    var = np.array(data.draw(st.lists(st.floats(1e-3, 4), min_size=6, max_size=6)))
    label = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=6, max_size=6)))
    label_var = np.array(data.draw(st.lists(st.floats(1e-4, 1), min_size=6, max_size=6)))
    pred = GaussianPrediction(mean, var)
    for lv in (nll_loss(pred, label), kld_loss(pred, label, label_var)):
        assert lv.total == lv.per_variable.sum()
