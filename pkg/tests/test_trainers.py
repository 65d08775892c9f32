import math

import numpy as np
import pytest

from headuq.errors import ConfigError, TrainingDivergedError
from headuq.synthetic import SyntheticConfig, make_synthetic_dataset
from headuq.trainers import (
    AdamW,
    OptimizerConfig,
    SamplerConfig,
    load_posterior,
    phase,
    sample_posterior,
    save_posterior,
    snapshot_offsets,
    step_size,
    train_adamw,
    train_csgmcmc,
    train_ensemble,
)


def small_dataset(seed=0, n=600, **kw):
    cfg = SyntheticConfig(
        n_examples=n, n_categories=3, dim=8, seed=seed,
        ambiguity=(0.05, 0.3, 0.6), **kw,
    )
    return make_synthetic_dataset(cfg)


FAST_SAMPLER = SamplerConfig(
    n_cycles=4, cycle_length=120, sampling_fraction=0.25,
    samples_per_cycle=3, burn_in_cycles=1, initial_step_size=1e-3,
    batch_size=32,
)

FAST_OPT = OptimizerConfig(max_epochs=5, batch_size=32)


class TestSchedule:
    def test_cycle_start_full_step(self):
        assert step_size(0, 2500, 1e-4) == 1e-4
        assert step_size(5000, 2500, 1e-4) == 1e-4

    def test_half_cycle_half_step(self):
        assert step_size(1250, 2500, 1e-4) == pytest.approx(0.5e-4, abs=1e-20)

    def test_last_step_positive_matches_formula(self):
        # oracle: direct evaluation of the cosine schedule
        expected = 0.5 * 1e-4 * (1 + math.cos(math.pi * 2499 / 2500))
        got = step_size(2499, 2500, 1e-4)
        assert got == expected
        assert got > 0

    def test_periodicity_exact(self):
        for t in range(0, 5000, 37):
            assert step_size(t, 2500, 3e-4) == step_size(t + 2500, 2500, 3e-4)


class TestPhase:
    def test_start_is_exploration(self):
        assert phase(0, 2500, 0.25) == "exploration"

    def test_boundary_belongs_to_sampling(self):
        assert phase(1875, 2500, 0.25) == "sampling"
        assert phase(1874, 2500, 0.25) == "exploration"

    def test_sampling_step_count(self):
        count = sum(1 for t in range(2500) if phase(t, 2500, 0.25) == "sampling")
        assert count == 625
        assert all(phase(t, 2500, 0.25) == "sampling" for t in range(1875, 2500))

    def test_snapshot_offsets_distinct_in_phase(self):
        offs = snapshot_offsets(2500, 0.25, 5)
        assert len(set(offs)) == 5
        assert all(1875 <= o < 2500 for o in offs)


class TestSamplerConfig:
    def test_degenerate_burn_in_rejected(self):
        with pytest.raises(ConfigError):
            SamplerConfig(n_cycles=4, burn_in_cycles=4).validate()

    def test_too_many_samples_per_cycle_rejected(self):
        with pytest.raises(ConfigError):
            SamplerConfig(cycle_length=20, sampling_fraction=0.25,
                          samples_per_cycle=6).validate()

    def test_canonical_retained_count(self):
        assert SamplerConfig().n_retained == 30


class TestSamplerCore:
    """Conjugate Gaussian target: the sampler's correctness anchor."""

    def _target(self, seed=2024, n=40):
        rng = np.random.default_rng(seed)
        cov_x = np.array([[1.0, 0.6], [0.6, 1.0]])
        x = rng.multivariate_normal(np.zeros(2), cov_x, size=n)
        y = x @ np.array([1.2, -0.7]) + rng.standard_normal(n)
        eta = 1.0
        lam = x.T @ x + eta * np.eye(2)
        sigma_post = np.linalg.inv(lam)
        mu_post = sigma_post @ (x.T @ y)

        def grad_fn(theta, t):
            return x.T @ (x @ theta - y) + eta * theta

        return grad_fn, mu_post, sigma_post, eta, n

    def _config(self, temperature=1.0, n_cycles=200, posterior_scale=40):
        return SamplerConfig(
            n_cycles=n_cycles, cycle_length=500, sampling_fraction=0.5,
            samples_per_cycle=5, burn_in_cycles=2, initial_step_size=1e-2,
            temperature=temperature, weight_decay=1.0,
            posterior_scale=posterior_scale, clip_norm=0.0, batch_size=40,
        )

    def test_conjugate_posterior_recovered(self):
        grad_fn, mu_post, sigma_post, _, n = self._target()
        cfg = self._config()
        snaps = np.array(
            sample_posterior(grad_fn, np.zeros(2), cfg, np.random.default_rng(7))
        )
        assert len(snaps) == cfg.n_retained == 990
        # Monte-Carlo standard error with post-burn-in cycles as the
        # effective independent unit (conservative).
        n_eff = cfg.n_cycles - cfg.burn_in_cycles
        se = np.sqrt(np.diag(sigma_post) / n_eff)
        assert np.all(np.abs(snaps.mean(axis=0) - mu_post) <= 3 * se)
        cov = np.cov(snaps.T)
        assert np.all(np.abs((cov - sigma_post) / sigma_post) < 0.15)

    def test_covariance_trace_monotone_in_temperature(self):
        grad_fn, _, _, _, _ = self._target()
        traces = []
        for temp in (0.25, 1.0, 4.0):
            cfg = self._config(temperature=temp, n_cycles=40)
            snaps = np.array(
                sample_posterior(grad_fn, np.zeros(2), cfg, np.random.default_rng(11))
            )
            traces.append(np.trace(np.cov(snaps.T)))
        assert traces[0] < traces[1] < traces[2]

    def test_zero_temperature_equals_disabled_noise(self):
        grad_fn, _, _, _, _ = self._target()
        cfg0 = self._config(temperature=0.0, n_cycles=4)
        cfg_off = SamplerConfig(
            **{**cfg0.__dict__, "temperature": 1.0, "disable_noise": True}
        )
        a = sample_posterior(grad_fn, np.zeros(2), cfg0, np.random.default_rng(3))
        b = sample_posterior(grad_fn, np.zeros(2), cfg_off, np.random.default_rng(3))
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa, sb)


class TestTrainCsgmcmc:
    def test_retained_count_formula(self):
        ds = small_dataset()
        post = train_csgmcmc(ds, "soft", FAST_SAMPLER, seed=42)
        assert len(post.members) == (4 - 1) * 3

    def test_bit_identical_reruns(self):
        ds = small_dataset()
        a = train_csgmcmc(ds, "soft", FAST_SAMPLER, seed=42)
        b = train_csgmcmc(ds, "soft", FAST_SAMPLER, seed=42)
        for ma, mb in zip(a.members, b.members):
            np.testing.assert_array_equal(ma.w, mb.w)
            np.testing.assert_array_equal(ma.b, mb.b)

    def test_divergence_reported_with_step(self):
        ds = small_dataset()
        bad = SamplerConfig(
            n_cycles=2, cycle_length=40, sampling_fraction=0.5,
            samples_per_cycle=2, burn_in_cycles=1,
            initial_step_size=1e5, weight_decay=1.0, clip_norm=0.0,
            batch_size=16,
        )
        with pytest.raises(TrainingDivergedError):
            train_csgmcmc(ds, "soft", bad, seed=0)

    def test_row_restriction(self):
        ds = small_dataset()
        rows = ds.split_indices("train")[:64]
        post = train_csgmcmc(ds, "soft", FAST_SAMPLER, seed=1, train_rows=rows)
        assert len(post.members) == FAST_SAMPLER.n_retained


class TestAdamWCore:
    def test_quadratic_bowl_reaches_minimizer(self):
        # oracle: the analytic minimizer of 0.5*||theta - target||^2
        target = np.array([1.5, -2.0, 0.25])
        cfg = OptimizerConfig(learning_rate=0.05, weight_decay=0.0)
        opt = AdamW(cfg, 3)
        theta = np.zeros(3)
        for _ in range(2000):
            theta = opt.step(theta, theta - target)
        assert np.max(np.abs(theta - target)) < 1e-3


class TestTrainAdamW:
    def test_patience_zero_rejected(self):
        with pytest.raises(ConfigError):
            OptimizerConfig(patience=0).validate()

    def test_separable_training_loss_decreases(self):
        ds = small_dataset(n=400)
        _, hist = train_adamw(
            ds, "hard",
            OptimizerConfig(max_epochs=6, learning_rate=5e-3, patience=6),
            seed=3, return_history=True,
        )
        losses = hist["train_loss"]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_bit_identical_reruns(self):
        ds = small_dataset()
        a = train_adamw(ds, "soft", FAST_OPT, seed=9)
        b = train_adamw(ds, "soft", FAST_OPT, seed=9)
        np.testing.assert_array_equal(a.w, b.w)
        np.testing.assert_array_equal(a.b, b.b)

    def test_dropout_changes_training(self):
        ds = small_dataset()
        a = train_adamw(ds, "soft", FAST_OPT, seed=9)
        b = train_adamw(ds, "soft", FAST_OPT, seed=9, dropout_p=0.2)
        assert np.max(np.abs(a.w - b.w)) > 1e-6


class TestEnsemble:
    def test_member_count(self):
        ds = small_dataset()
        post = train_ensemble(ds, "soft", FAST_OPT, seed=5)
        assert len(post.members) == 5

    def test_identical_member_seed_bit_identical(self):
        from headuq.rngstream import derive_seed

        ds = small_dataset()
        seed = derive_seed(5, "ensemble-member", 2)
        a = train_adamw(ds, "soft", FAST_OPT, seed=seed)
        b = train_adamw(ds, "soft", FAST_OPT, seed=seed)
        np.testing.assert_array_equal(a.w, b.w)

    def test_members_differ_pairwise(self):
        ds = small_dataset()
        post = train_ensemble(ds, "soft", FAST_OPT, seed=5)
        for i in range(len(post.members)):
            for j in range(i + 1, len(post.members)):
                assert np.max(np.abs(post.members[i].w - post.members[j].w)) > 1e-6


class TestPosteriorSerialization:
    def test_round_trip(self, tmp_path):
        ds = small_dataset()
        post = train_csgmcmc(ds, "hard", FAST_SAMPLER, seed=21)
        save_posterior(post, tmp_path / "post")
        again = load_posterior(tmp_path / "post")
        assert again.method == post.method
        assert again.label_mode == post.label_mode
        assert again.seed == post.seed
        assert len(again.members) == len(post.members)
        for ma, mb in zip(post.members, again.members):
            np.testing.assert_array_equal(ma.w, mb.w)
