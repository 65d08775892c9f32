import math

import numpy as np
import pytest

from headuq.calibrate import apply_temperature, fit_temperature, rank_stability
from headuq.model import HeadWeights
from headuq.trainers import PosteriorSamples
from headuq.uncertainty import predict


def make_posterior(m=3, c=3, d=5, seed=0, method="deep_ensemble", **kw):
    rng = np.random.default_rng(seed)
    members = [
        HeadWeights(
            rng.standard_normal((c, d)).astype(np.float32),
            rng.standard_normal(c).astype(np.float32),
        )
        for _ in range(m)
    ]
    return PosteriorSamples(
        members=members, method=method, label_mode="soft", seed=seed, **kw
    )


class TestFitTemperature:
    def test_true_log_odds_recovers_unit_temperature(self):
        # label proportions equal the sigmoid of the logit gap exactly, so
        # the NLL-optimal temperature is 1 (grid-search oracle agrees)
        logits, labels = [], []
        for p_true, n_group in ((0.6, 10), (0.8, 10), (0.95, 20)):
            gap = math.log(p_true / (1 - p_true))
            n0 = round(p_true * n_group)
            for i in range(n_group):
                logits.append([gap, 0.0])
                labels.append(0 if i < n0 else 1)
        logits = np.array(logits)[None, :, :]
        labels = np.array(labels)

        fit = fit_temperature(logits, labels)
        assert abs(fit.t_opt - 1.0) < 1e-2

        # coarse independent grid search around the bracket
        from headuq.calibrate import _nll_at

        grid = np.exp(np.linspace(math.log(0.05), math.log(10), 200))
        best = grid[int(np.argmin([_nll_at(logits, labels, t) for t in grid]))]
        assert abs(best - fit.t_opt) < 2e-2

    def test_sharpened_logits_fit_above_one(self):
        rng = np.random.default_rng(1)
        n = 5000
        p1 = rng.uniform(0.05, 0.95, size=n)
        # logits deliberately sharpened by 3x: optimal T is about 3
        logits = 3.0 * np.stack([np.log(p1), np.log1p(-p1)], axis=1)[None, :, :]
        labels = (rng.random(n) >= p1).astype(int)
        fit = fit_temperature(logits, labels)
        assert 2.0 < fit.t_opt < 4.5

    def test_all_zero_logits_identity_with_flag(self):
        logits = np.zeros((2, 50, 4))
        labels = np.zeros(50, dtype=int)
        fit = fit_temperature(logits, labels)
        assert fit.t_opt == 1.0
        assert fit.fallback_to_identity
        assert fit.val_nll_after == fit.val_nll_before

    def test_nll_never_increases(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            m, n, c = int(rng.integers(1, 5)), 200, int(rng.integers(2, 6))
            logits = rng.normal(0, rng.uniform(0.5, 4.0), size=(m, n, c))
            labels = rng.integers(0, c, size=n)
            fit = fit_temperature(logits, labels)
            assert fit.val_nll_after <= fit.val_nll_before + 1e-9
            assert fit.t_opt > 0


class TestApplyTemperature:
    def test_unit_temperature_bit_exact_identity(self):
        post = make_posterior()
        x = np.random.default_rng(3).standard_normal((30, 5)).astype(np.float32)
        rows = np.arange(30)
        plain = predict(post, rows, x)
        scaled = apply_temperature(post, 1.0, rows, x)
        np.testing.assert_array_equal(plain.mean_dist, scaled.mean_dist)
        np.testing.assert_array_equal(plain.h_tot, scaled.h_tot)
        np.testing.assert_array_equal(plain.h_epi, scaled.h_epi)

    def test_unit_temperature_identity_mc_dropout(self):
        post = make_posterior(m=1, method="mc_dropout", dropout_rate=0.2, n_passes=6)
        x = np.random.default_rng(4).standard_normal((10, 5)).astype(np.float32)
        rows = np.arange(10)
        a = predict(post, rows, x, rng=np.random.default_rng(9))
        b = apply_temperature(post, 1.0, rows, x, rng=np.random.default_rng(9))
        np.testing.assert_array_equal(a.mean_dist, b.mean_dist)

    def test_large_temperature_flattens_to_uniform(self):
        post = make_posterior()
        x = np.random.default_rng(5).standard_normal((10, 5)).astype(np.float32)
        scaled = apply_temperature(post, 1e6, np.arange(10), x)
        c = scaled.n_categories
        np.testing.assert_allclose(scaled.mean_dist, 1.0 / c, atol=1e-4)
        np.testing.assert_allclose(scaled.h_tot, math.log(c), atol=1e-4)

    def test_single_member_argmax_invariant(self):
        post = make_posterior(m=1, method="deterministic")
        x = np.random.default_rng(6).standard_normal((40, 5)).astype(np.float32)
        rows = np.arange(40)
        base = predict(post, rows, x)
        for t in (0.2, 0.7, 3.0, 8.0):
            scaled = apply_temperature(post, t, rows, x)
            np.testing.assert_array_equal(base.argmax(), scaled.argmax())


class TestRankStability:
    def test_single_member_two_class_exactly_one(self):
        # binary confidence/entropy are monotone in the logit gap, so
        # single-member scaling preserves cross-example ranks exactly
        post = make_posterior(m=1, c=2, method="deterministic")
        x = np.random.default_rng(7).standard_normal((25, 5)).astype(np.float32)
        rows = np.arange(25)
        before = predict(post, rows, x)
        after = apply_temperature(post, 2.5, rows, x)
        rho_conf, rho_ent = rank_stability(before, after)
        assert rho_conf == 1.0
        assert rho_ent == 1.0

    def test_single_member_multiclass_high_but_argmax_exact(self):
        # with 3+ classes only the per-example argmax is exactly invariant;
        # cross-example confidence ranks stay high but can permute
        post = make_posterior(m=1, c=4, method="deterministic")
        x = np.random.default_rng(7).standard_normal((200, 5)).astype(np.float32)
        rows = np.arange(200)
        before = predict(post, rows, x)
        after = apply_temperature(post, 2.5, rows, x)
        np.testing.assert_array_equal(before.argmax(), after.argmax())
        rho_conf, rho_ent = rank_stability(before, after)
        assert rho_conf > 0.95
        assert rho_ent > 0.95

    def test_disagreeing_members_below_one(self):
        rng = np.random.default_rng(8)
        members = [
            HeadWeights(
                (3.0 * rng.standard_normal((3, 5))).astype(np.float32),
                rng.standard_normal(3).astype(np.float32),
            )
            for _ in range(2)
        ]
        post = PosteriorSamples(
            members=members, method="deep_ensemble", label_mode="soft", seed=0
        )
        x = rng.standard_normal((200, 5)).astype(np.float32)
        rows = np.arange(200)
        before = predict(post, rows, x)
        after = apply_temperature(post, 4.0, rows, x)
        rho_conf, rho_ent = rank_stability(before, after)
        assert 0.0 < rho_conf < 1.0
        assert 0.0 < rho_ent < 1.0
