import math

import numpy as np
import pytest
import scipy.stats

from countsup.countdp import NEG_INF, InstanceScores, count_distribution
from countsup.losses import (
    LOSS_CAP,
    CappedLossWarning,
    LossValue,
    MixtureEstimate,
    binomial_log_pmf,
    capped_loss_count,
    estimate_mixture_proportion,
    llp_loss,
    mil_loss,
    positive_ce_loss,
    pu_expect_loss,
    pu_kl_loss,
    reset_capped_loss_count,
)
from countsup.oracle import finite_diff_gradient

FIG_PROBS = [0.1, 0.2, 0.3]


def scores_from(p):
    return InstanceScores.from_probabilities(np.asarray(p, dtype=np.float64))


def check_gradient(loss_fn, scores, atol=1e-5):
    lv = loss_fn(scores)
    fd = finite_diff_gradient(lambda sc: loss_fn(sc).loss, scores, 1e-5)
    np.testing.assert_allclose(lv.grad.d_t, fd, atol=atol)


class TestLlpLoss:
    def test_single_instance_cross_entropy(self):
        lv = llp_loss(scores_from([0.8]), 1.0)
        assert lv.loss == pytest.approx(-math.log(0.8), abs=1e-15)
        assert lv.grad.d_t[0] == -1.0

    def test_single_instance_reduction_is_exact(self):
        scores = scores_from([0.37])
        assert llp_loss(scores, 1.0).loss == -float(scores.t[0])
        assert llp_loss(scores, 0.0).loss == -float(scores.t_complement[0])
        assert llp_loss(scores, 0.0).grad.d_t[0] == math.exp(
            float(scores.t[0]) - float(scores.t_complement[0])
        )

    def test_three_instance_example(self):
        lv = llp_loss(scores_from(FIG_PROBS), 1.0 / 3.0)
        assert lv.loss == pytest.approx(0.9213032736976994, abs=1e-9)

    def test_confident_pair(self):
        lv = llp_loss(scores_from([0.99, 0.99]), 1.0)
        assert lv.loss == pytest.approx(-2.0 * math.log(0.99), abs=1e-12)

    @pytest.mark.parametrize("bad", [-0.1, 1.1])
    def test_rejects_out_of_range_proportion(self, bad):
        with pytest.raises(ValueError):
            llp_loss(scores_from(FIG_PROBS), bad)

    def test_rejects_non_integral_count(self):
        with pytest.raises(ValueError, match="integer"):
            llp_loss(scores_from(FIG_PROBS), 0.4)

    def test_accepts_rounding_fuzz(self):
        lv = llp_loss(scores_from(FIG_PROBS), (1.0 / 3.0) + 1e-8)
        assert lv.loss == pytest.approx(0.9213032736976994, abs=1e-9)

    def test_gradients(self):
        rng = np.random.default_rng(2)
        for _ in range(8):
            k = int(rng.integers(1, 25))
            s = int(rng.integers(0, k + 1))
            check_gradient(
                lambda sc, s=s: llp_loss(sc, s / sc.k),
                scores_from(rng.uniform(0.02, 0.98, k)),
            )

    def test_capped_when_impossible(self):
        # a certain positive makes a zero count impossible
        scores = InstanceScores(
            np.array([0.0, math.log(0.4)]), np.array([NEG_INF, math.log(0.6)])
        )
        reset_capped_loss_count()
        with pytest.warns(CappedLossWarning):
            lv = llp_loss(scores, 0.0)
        assert lv.loss == LOSS_CAP
        np.testing.assert_array_equal(lv.grad.d_t, 0.0)
        assert capped_loss_count() == 1


class TestMilLoss:
    def test_single_instance_positive(self):
        lv = mil_loss(scores_from([0.5]), 1)
        assert lv.loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_three_instance_negative(self):
        lv = mil_loss(scores_from(FIG_PROBS), 0)
        assert lv.loss == pytest.approx(0.6851790109107684, abs=1e-12)

    def test_three_instance_positive(self):
        lv = mil_loss(scores_from(FIG_PROBS), 1)
        assert lv.loss == pytest.approx(0.7011793522572096, abs=1e-12)

    def test_branches_sum_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            scores = scores_from(rng.uniform(0.01, 0.99, int(rng.integers(1, 20))))
            p0 = math.exp(-mil_loss(scores, 0).loss)
            p1 = math.exp(-mil_loss(scores, 1).loss)
            assert p0 + p1 == pytest.approx(1.0, abs=1e-9)

    def test_positive_weight_scales(self):
        scores = scores_from(FIG_PROBS)
        base = mil_loss(scores, 1)
        heavy = mil_loss(scores, 1, positive_weight=2.5)
        assert heavy.loss == pytest.approx(2.5 * base.loss, rel=1e-12)
        np.testing.assert_allclose(heavy.grad.d_t, 2.5 * base.grad.d_t, rtol=1e-12)

    def test_negative_weight_untouched(self):
        scores = scores_from(FIG_PROBS)
        assert mil_loss(scores, 0, positive_weight=2.5).loss == mil_loss(scores, 0).loss

    def test_gradients(self):
        rng = np.random.default_rng(4)
        for label in (0, 1):
            for _ in range(5):
                k = int(rng.integers(1, 25))
                check_gradient(
                    lambda sc, label=label: mil_loss(sc, label),
                    scores_from(rng.uniform(0.02, 0.98, k)),
                )

    def test_impossible_positive_bag_capped(self):
        scores = InstanceScores(np.array([NEG_INF]), np.array([0.0]))
        reset_capped_loss_count()
        with pytest.warns(CappedLossWarning):
            lv = mil_loss(scores, 1)
        assert lv.loss == LOSS_CAP
        np.testing.assert_array_equal(lv.grad.d_t, 0.0)

    def test_rejects_bad_label(self):
        with pytest.raises(ValueError):
            mil_loss(scores_from(FIG_PROBS), 2)


class TestBinomialLogPmf:
    def test_fair_pair(self):
        assert binomial_log_pmf(2, 0.5, 1) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_reference_point(self):
        # log(C(10,3) * 0.3^3 * 0.7^7), 50-digit evaluation
        assert binomial_log_pmf(10, 0.3, 3) == pytest.approx(
            -1.3211512777668886, abs=1e-12
        )

    def test_degenerate_rates(self):
        assert binomial_log_pmf(5, 0.0, 0) == 0.0
        assert binomial_log_pmf(5, 0.0, 3) == NEG_INF
        assert binomial_log_pmf(5, 1.0, 5) == 0.0
        assert binomial_log_pmf(5, 1.0, 4) == NEG_INF

    def test_matches_scipy(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k = int(rng.integers(1, 80))
            beta = float(rng.uniform(0.05, 0.95))
            s = int(rng.integers(0, k + 1))
            assert binomial_log_pmf(k, beta, s) == pytest.approx(
                scipy.stats.binom.logpmf(s, k, beta), rel=1e-10, abs=1e-12
            )

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            binomial_log_pmf(3, 0.5, 4)
        with pytest.raises(ValueError):
            binomial_log_pmf(3, 1.5, 1)


class TestPuKlLoss:
    @pytest.mark.parametrize("k,beta", [(1, 0.5), (8, 0.1), (40, 0.5), (64, 0.9)])
    def test_zero_at_matched_point(self, k, beta):
        lv = pu_kl_loss(scores_from([beta] * k), beta)
        assert 0.0 <= lv.loss <= 1e-9
        np.testing.assert_allclose(lv.grad.d_t, 0.0, atol=1e-7)

    def test_three_instance_value(self):
        # KL(Bin(3, 0.5) || (0.504, 0.398, 0.092, 0.006)), 50-digit evaluation
        lv = pu_kl_loss(scores_from(FIG_PROBS), 0.5)
        assert lv.loss == pytest.approx(0.7098907682659011, abs=1e-9)

    def test_direct_summation_oracle(self):
        scores = scores_from([0.2, 0.55, 0.7, 0.9])
        beta = 0.4
        logp = count_distribution(scores).logp
        expected = 0.0
        for s in range(5):
            lb = binomial_log_pmf(4, beta, s)
            expected += math.exp(lb) * (lb - float(logp[s]))
        assert pu_kl_loss(scores, beta).loss == pytest.approx(expected, abs=1e-12)

    def test_saturated_pair(self):
        eps = 1e-7
        scores = scores_from([1.0 - eps, 1.0 - eps])
        logp = count_distribution(scores).logp
        expected = sum(
            math.exp(binomial_log_pmf(2, 0.5, s))
            * (binomial_log_pmf(2, 0.5, s) - float(logp[s]))
            for s in range(3)
        )
        assert pu_kl_loss(scores, 0.5).loss == pytest.approx(expected, rel=1e-9)

    def test_non_negative_and_positive_when_mismatched(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            k = int(rng.integers(2, 30))
            lv = pu_kl_loss(scores_from(rng.uniform(0.05, 0.95, k)), 0.5)
            assert lv.loss >= 0.0
        assert pu_kl_loss(scores_from([0.9, 0.9, 0.9]), 0.1).loss > 1e-3

    def test_gradients(self):
        rng = np.random.default_rng(7)
        for _ in range(6):
            k = int(rng.integers(1, 25))
            beta = float(rng.uniform(0.1, 0.9))
            check_gradient(
                lambda sc, beta=beta: pu_kl_loss(sc, beta),
                scores_from(rng.uniform(0.02, 0.98, k)),
            )

    def test_rejects_degenerate_beta(self):
        for bad in (0.0, 1.0):
            with pytest.raises(ValueError):
                pu_kl_loss(scores_from(FIG_PROBS), bad)


class TestPuExpectLoss:
    def test_matched_pair(self):
        lv = pu_expect_loss(scores_from([0.5, 0.5]), 0.5)
        assert lv.loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_three_instance_example(self):
        lv = pu_expect_loss(scores_from(FIG_PROBS), 1.0 / 3.0)
        assert lv.loss == pytest.approx(0.9213032736976994, abs=1e-9)

    def test_near_deterministic_match(self):
        eps = 1e-7
        lv = pu_expect_loss(scores_from([1 - eps, 1 - eps, eps, eps]), 0.5)
        assert lv.loss == pytest.approx(0.0, abs=1e-5)

    def test_banker_rounding_of_target(self):
        # k * beta = 1.5 rounds to the even count 2
        scores = scores_from([0.3, 0.3, 0.3])
        lv = pu_expect_loss(scores, 0.5)
        expected = -float(count_distribution(scores).logp[2])
        assert lv.loss == pytest.approx(expected, abs=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(8)
        for _ in range(6):
            k = int(rng.integers(1, 25))
            beta = float(rng.uniform(0.0, 1.0))
            check_gradient(
                lambda sc, beta=beta: pu_expect_loss(sc, beta),
                scores_from(rng.uniform(0.02, 0.98, k)),
            )


class TestPositiveCeLoss:
    def test_certain_positive(self):
        scores = InstanceScores(np.array([0.0]), np.array([NEG_INF]))
        lv = positive_ce_loss(scores)
        assert lv.loss == 0.0
        np.testing.assert_array_equal(lv.grad.d_t, [-1.0])

    def test_pair_of_halves(self):
        lv = positive_ce_loss(scores_from([0.5, 0.5]))
        assert lv.loss == pytest.approx(math.log(2.0), abs=1e-12)
        np.testing.assert_array_equal(lv.grad.d_t, [-0.5, -0.5])

    def test_mixed_pair(self):
        lv = positive_ce_loss(scores_from([0.9, 0.8]))
        assert lv.loss == pytest.approx(0.16425203348601802, abs=1e-12)

    def test_gradient_is_uniform(self):
        check_gradient(positive_ce_loss, scores_from([0.3, 0.6, 0.9]))


class TestMixtureProportion:
    def test_reference_point(self):
        est = estimate_mixture_proportion(0.5, 0.25)
        assert est.c == pytest.approx(0.5, abs=1e-15)
        assert est.beta == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_fully_labeled(self):
        est = estimate_mixture_proportion(0.5, 0.5)
        assert est.c == 1.0
        assert est.beta == 0.0

    def test_vanishing_labels_recovers_prior(self):
        est = estimate_mixture_proportion(0.5, 1e-12)
        assert est.beta == pytest.approx(0.5, abs=1e-9)

    def test_monotone_in_labeled_fraction(self):
        betas = [
            estimate_mixture_proportion(0.6, lf).beta
            for lf in np.linspace(0.01, 0.6, 25)
        ]
        assert all(a > b for a, b in zip(betas, betas[1:]))

    def test_rejects_inconsistent_fraction(self):
        with pytest.raises(ValueError, match="exceeds"):
            estimate_mixture_proportion(0.3, 0.4)

    def test_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            estimate_mixture_proportion(1.0, 0.5)
        with pytest.raises(ValueError):
            estimate_mixture_proportion(0.5, 0.0)

    def test_type_validates_consistency(self):
        with pytest.raises(ValueError):
            MixtureEstimate(alpha=0.5, c=0.5, beta=0.9)


class TestBoundaryGradients:
    def test_clamp_boundary_at_fine_step(self):
        # at p near 0.99 the h=1e-5 two-point stencil carries ~3e-5 of its
        # own truncation; at h=1e-6 it drops ~100x and the analytic
        # gradients must sit well inside it
        rng = np.random.default_rng(44)
        for _ in range(10):
            k = int(rng.integers(1, 17))
            p = rng.choice([0.01, 0.99], size=k) + rng.uniform(-0.001, 0.001, size=k)
            scores = scores_from(np.clip(p, 0.009, 0.991))
            for fn in (
                lambda sc: mil_loss(sc, 0),
                lambda sc: mil_loss(sc, 1),
                lambda sc: pu_kl_loss(sc, 0.5),
            ):
                lv = fn(scores)
                fd = finite_diff_gradient(lambda sc: fn(sc).loss, scores, 1e-6)
                np.testing.assert_allclose(lv.grad.d_t, fd, atol=1e-7, rtol=1e-6)


class TestLossValue:
    def test_rejects_negative_loss(self):
        from countsup.countdp import CountGradient

        with pytest.raises(ValueError):
            LossValue(-0.5, CountGradient(np.zeros(1)))
