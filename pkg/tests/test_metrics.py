import math

import numpy as np
import pytest

from headuq.dataio import build_dataset
from headuq.errors import DataValidationError
from headuq.metrics import (
    accuracy_macro_f1,
    annotator_divergences,
    aurc,
    auroc,
    bootstrap_rho_ci,
    brier_multiclass,
    compute_report,
    ece,
    failure_entropy_ratio,
    jsd_bits,
    kl_nats,
    nll_hard,
    reliability_bins,
    risk_coverage_curve,
    spearman_per_category,
    spearman_rho,
    tv_distance,
)
from headuq.uncertainty import from_member_dists

from oracles import (
    aurc_oracle,
    auroc_oracle,
    brier_oracle,
    ece_oracle,
    jsd_oracle,
    kl_oracle,
    macro_f1_oracle,
    nll_oracle,
    spearman_oracle,
    tv_oracle,
)


def preds_from_mean(mean):
    mean = np.asarray(mean, dtype=np.float64)
    return from_member_dists([str(i) for i in range(len(mean))], mean[None, :, :])


def random_instance(rng, n_max=50):
    n = int(rng.integers(2, n_max + 1))
    c = int(rng.integers(2, 8))
    mean = rng.dirichlet(np.ones(c), size=n)
    labels = rng.integers(0, c, size=n)
    # quantized scores force tie handling through both code paths
    scores = np.round(rng.random(n), 1)
    correct = rng.integers(0, 2, size=n).astype(bool)
    return n, c, mean, labels, scores, correct


class TestCalibrationMetrics:
    def test_ece_perfect_predictions(self):
        mean = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert ece(preds_from_mean(mean), np.array([0, 1, 0]), 15) == 0.0

    def test_ece_single_bin_hand_case(self):
        mean = np.array([[0.8, 0.2], [0.8, 0.2]])
        got = ece(preds_from_mean(mean), np.array([0, 1]), 15)
        assert got == pytest.approx(abs(0.5 - 0.8), abs=1e-12)

    def test_ece_matches_oracle_randomized(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n, c, mean, labels, _, _ = random_instance(rng)
            got = ece(preds_from_mean(mean), labels, 15)
            want = ece_oracle(mean, labels, 15)
            assert abs(got - want) < 1e-9

    def test_ece_recomputable_from_reliability_bins(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n, c, mean, labels, _, _ = random_instance(rng)
            pred = preds_from_mean(mean)
            bins = reliability_bins(pred, labels, 15)
            recomputed = math.fsum(
                row["count"] / n * abs(row["accuracy"] - row["mean_confidence"])
                for row in bins
                if row["count"]
            )
            assert abs(ece(pred, labels, 15) - recomputed) < 1e-12

    def test_reliability_single_example(self):
        mean = np.array([[0.9, 0.1]])
        bins = reliability_bins(preds_from_mean(mean), np.array([0]), 10)
        nonempty = [b for b in bins if b["count"]]
        assert len(nonempty) == 1
        assert nonempty[0]["count"] == 1
        assert nonempty[0]["mean_confidence"] == pytest.approx(0.9)
        assert nonempty[0]["accuracy"] == 1.0

    def test_brier_hand_cases(self):
        perfect = np.zeros((3, 2))
        perfect[np.arange(3), [0, 1, 0]] = 1.0
        assert brier_multiclass(preds_from_mean(perfect), np.array([0, 1, 0])) == 0.0
        uniform = np.array([[0.5, 0.5]])
        assert brier_multiclass(preds_from_mean(uniform), np.array([0])) == pytest.approx(0.5)

    def test_brier_matches_oracle_randomized(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            _, _, mean, labels, _, _ = random_instance(rng)
            got = brier_multiclass(preds_from_mean(mean), labels)
            assert abs(got - brier_oracle(mean, labels)) < 1e-9

    def test_nll_uniform_28(self):
        mean = np.full((4, 28), 1 / 28)
        got = nll_hard(preds_from_mean(mean), np.zeros(4, dtype=int))
        assert got == pytest.approx(math.log(28), abs=1e-12)

    def test_nll_matches_oracle(self):
        mean = np.array([[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]])
        labels = np.array([0, 0, 1])
        got = nll_hard(preds_from_mean(mean), labels)
        assert got == pytest.approx(nll_oracle(mean, labels), abs=1e-12)


class TestDivergences:
    def test_identical_distributions_zero(self):
        q = np.array([[0.3, 0.7]])
        assert jsd_bits(q, q) == 0.0
        assert kl_nats(q, q) == 0.0
        assert tv_distance(q, q) == 0.0

    def test_jsd_hand_value(self):
        # oracle: direct base-2 evaluation frozen from the definition
        got = jsd_bits(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        assert got == pytest.approx(0.31127812445913283, abs=1e-12)

    def test_jsd_symmetric_and_bounded(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            c = int(rng.integers(2, 10))
            q, p = rng.dirichlet(np.ones(c)), rng.dirichlet(np.ones(c))
            a, b = jsd_bits(q, p), jsd_bits(p, q)
            assert abs(a - b) < 1e-12
            assert -1e-12 <= a <= 1.0 + 1e-12

    def test_matches_oracles_randomized(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            c = int(rng.integers(2, 10))
            q, p = rng.dirichlet(np.ones(c)), rng.dirichlet(np.ones(c))
            # zero some q components to exercise 0*log0
            if c > 3:
                q[0] = 0.0
                q /= q.sum()
            assert abs(jsd_bits(q, p) - jsd_oracle(q, p)) < 1e-9
            assert abs(kl_nats(q, p) - kl_oracle(q, p)) < 1e-9
            assert abs(tv_distance(q, p) - tv_oracle(q, p)) < 1e-9


class TestSpearman:
    def test_perfectly_ordered(self):
        assert spearman_rho(np.array([1.0, 2, 3, 4]), np.array([10.0, 20, 30, 40])) == 1.0

    def test_reversed(self):
        assert spearman_rho(np.array([1.0, 2, 3, 4]), np.array([4.0, 3, 2, 1])) == -1.0

    def test_tie_case_matches_oracle(self):
        x = np.array([1.0, 2.0, 2.0, 3.0, 4.0])
        y = np.array([0.2, 0.5, 0.1, 0.9, 0.7])
        assert spearman_rho(x, y) == pytest.approx(spearman_oracle(x, y), abs=1e-12)

    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            n = int(rng.integers(3, 51))
            x = np.round(rng.random(n), 1)
            y = np.round(rng.random(n), 1)
            want = spearman_oracle(x, y)
            got = spearman_rho(x, y)
            if math.isnan(want):
                assert math.isnan(got)
            else:
                assert abs(got - want) < 1e-9

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(13)
        x, y = rng.random(20), rng.random(20)
        base = spearman_rho(x, y)
        assert spearman_rho(np.exp(x), y) == pytest.approx(base, abs=1e-12)
        assert spearman_rho(3.0 * x + 2.0, y) == pytest.approx(base, abs=1e-12)


class TestSelectivePrediction:
    def test_aurc_all_correct(self):
        assert aurc(np.array([0.5, 0.1, 0.9]), np.array([1, 1, 1])) == 0.0

    def test_aurc_hand_case_exact(self):
        # risks (0, 0, 1/3, 1/2) -> mean 5/24, exact under the rational
        # accumulation
        scores = np.array([0.1, 0.2, 0.3, 0.4])
        correct = np.array([1, 1, 0, 0])
        assert aurc(scores, correct) == 5 / 24

    def test_aurc_full_coverage_risk_is_error_rate(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            scores = rng.random(n)
            correct = rng.integers(0, 2, size=n)
            _, risks = risk_coverage_curve(scores, correct)
            assert risks[-1] == pytest.approx(1.0 - correct.mean(), abs=1e-12)

    def test_aurc_matches_oracle_randomized(self):
        rng = np.random.default_rng(15)
        for _ in range(200):
            n, _, _, _, scores, correct = random_instance(rng)
            got = aurc(scores, correct)
            assert abs(got - aurc_oracle(list(scores), list(correct))) < 1e-9

    def test_aurc_empty_rejected(self):
        with pytest.raises(DataValidationError):
            aurc(np.array([]), np.array([]))

    def test_auroc_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        correct = np.array([0, 0, 1, 1])
        assert auroc(scores, correct) == 1.0

    def test_auroc_identical_scores_half(self):
        assert auroc(np.ones(6), np.array([1, 0, 1, 0, 1, 0])) == 0.5

    def test_auroc_six_element_tie_case(self):
        scores = np.array([0.3, 0.5, 0.5, 0.7, 0.2, 0.9])
        correct = np.array([1, 1, 0, 0, 1, 0])
        assert auroc(scores, correct) == pytest.approx(
            auroc_oracle(list(scores), list(correct)), abs=1e-12
        )

    def test_auroc_one_class_absent(self):
        assert auroc(np.array([0.1, 0.2]), np.array([1, 1])) is None

    def test_auroc_matches_oracle_randomized(self):
        rng = np.random.default_rng(16)
        checked = 0
        while checked < 200:
            n, _, _, _, scores, correct = random_instance(rng)
            want = auroc_oracle(list(scores), list(correct))
            got = auroc(scores, correct)
            if want is None:
                assert got is None
                continue
            assert abs(got - want) < 1e-9
            checked += 1

    def test_auroc_monotone_transform_invariance(self):
        rng = np.random.default_rng(17)
        scores = rng.random(30)
        correct = rng.integers(0, 2, size=30)
        base = auroc(scores, correct)
        assert auroc(np.exp(scores), correct) == pytest.approx(base, abs=1e-12)
        assert auroc(5.0 * scores + 1.0, correct) == pytest.approx(base, abs=1e-12)


class TestAccuracyMacroF1:
    def test_all_correct(self):
        mean = np.eye(3)
        acc, f1 = accuracy_macro_f1(preds_from_mean(mean), np.arange(3), 3)
        assert (acc, f1) == (1.0, 1.0)

    def test_confusion_hand_case(self):
        # confusion [[1,1],[0,2]]: acc 0.75, macro-F1 mean(2/3, 4/5)
        mean = np.array([[0.9, 0.1], [0.1, 0.9], [0.1, 0.9], [0.1, 0.9]])
        labels = np.array([0, 0, 1, 1])
        acc, f1 = accuracy_macro_f1(preds_from_mean(mean), labels, 2)
        assert acc == 0.75
        assert f1 == pytest.approx((2 / 3 + 4 / 5) / 2, abs=1e-12)

    def test_empty_class_counts_zero(self):
        # class 2 never true, never predicted -> F1 contribution 0
        mean = np.array([[0.9, 0.1, 0.0], [0.1, 0.9, 0.0]])
        labels = np.array([0, 1])
        _, f1 = accuracy_macro_f1(preds_from_mean(mean), labels, 3)
        assert f1 == pytest.approx(
            macro_f1_oracle([0, 1], list(labels), 3), abs=1e-12
        )
        assert f1 == pytest.approx(2 / 3, abs=1e-12)


class TestFailureEntropyRatio:
    def test_identical_entropies(self):
        mean = np.array([[0.5, 0.5], [0.5, 0.5]])
        ratio = failure_entropy_ratio(preds_from_mean(mean), np.array([0, 1]))
        assert ratio == pytest.approx(1.0)

    def test_hand_ratio(self):
        # wrongs at entropy ln2, right at ln2/2 -> ratio 2
        h = math.log(2)
        pred = preds_from_mean(np.array([[0.5, 0.5]] * 3))
        pred.h_tot = np.array([h, h, h / 2])
        pred.mean_dist = np.array([[0.4, 0.6], [0.4, 0.6], [0.9, 0.1]])
        ratio = failure_entropy_ratio(pred, np.array([0, 0, 0]))
        assert ratio == pytest.approx(2.0, abs=1e-12)

    def test_absent_when_one_class_missing(self):
        mean = np.array([[0.9, 0.1]])
        assert failure_entropy_ratio(preds_from_mean(mean), np.array([0])) is None


def category_dataset(n_per_cat=40, n_cat=5, seed=0, ambiguity=None):
    rng = np.random.default_rng(seed)
    ambiguity = ambiguity or [0.02 + 0.2 * c for c in range(n_cat)]
    votes, splits = [], []
    for c in range(n_cat):
        for _ in range(n_per_cat):
            v = [c, c, c]
            if rng.random() < ambiguity[c]:
                v[2] = int((c + 1) % n_cat)
            votes.append(v)
            splits.append("validation")
    n = len(votes)
    return build_dataset(
        features=rng.standard_normal((n, 4)).astype(np.float32),
        ids=[f"e{i}" for i in range(n)],
        vote_lists=votes,
        splits=splits,
        high_disagreement=[False] * n,
        category_names=[f"c{k}" for k in range(n_cat)],
    )


class TestSpearmanPerCategory:
    def test_perfect_ordering(self):
        ds = category_dataset()
        rows = ds.split_indices("validation")
        # aleatoric entropy ordered like the category index = like ambiguity
        dists = np.zeros((1, len(rows), ds.n_categories))
        for i, r in enumerate(rows):
            c = ds.hard_labels[r]
            eps = 0.02 + 0.1 * c
            dists[0, i] = eps / ds.n_categories
            dists[0, i, c] += 1 - eps
        pred = from_member_dists([ds.ids[r] for r in rows], dists)
        rho, table = spearman_per_category(pred, ds, "validation", min_support=10)
        assert rho == 1.0
        assert sum(1 for r in table if r["qualifies"]) == 5

    def test_reversed_ordering(self):
        ds = category_dataset()
        rows = ds.split_indices("validation")
        dists = np.zeros((1, len(rows), ds.n_categories))
        for i, r in enumerate(rows):
            c = ds.hard_labels[r]
            eps = 0.5 - 0.1 * c
            dists[0, i] = eps / ds.n_categories
            dists[0, i, c] += 1 - eps
        pred = from_member_dists([ds.ids[r] for r in rows], dists)
        rho, _ = spearman_per_category(pred, ds, "validation", min_support=10)
        assert rho == -1.0

    def test_min_support_excludes(self):
        ds = category_dataset()
        rows = ds.split_indices("validation")
        dists = np.full((1, len(rows), ds.n_categories), 1.0 / ds.n_categories)
        pred = from_member_dists([ds.ids[r] for r in rows], dists)
        rho, table = spearman_per_category(pred, ds, "validation", min_support=41)
        assert rho is None
        assert all(not r["qualifies"] for r in table)


class TestBootstrapRhoCI:
    def test_identical_coordinate_pairs_degenerate_point(self):
        pairs = [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]
        lo, hi = bootstrap_rho_ci(pairs, n_boot=200, seed=0)
        assert lo == hi == 1.0

    def test_coverage_simulation(self):
        # bivariate normal with correlation r; population Spearman rho is
        # (6/pi) * asin(r/2)
        r = 0.5
        true_rho = 6 / math.pi * math.asin(r / 2)
        rng = np.random.default_rng(100)
        cov = np.array([[1.0, r], [r, 1.0]])
        covered = 0
        reps = 150
        for rep in range(reps):
            sample = rng.multivariate_normal(np.zeros(2), cov, size=23)
            ci = bootstrap_rho_ci(
                [tuple(row) for row in sample], n_boot=300, seed=rep
            )
            if ci[0] <= true_rho <= ci[1]:
                covered += 1
        assert covered / reps >= 0.90


class TestComputeReport:
    def test_report_fields_and_ranges(self):
        ds = category_dataset()
        rows = ds.split_indices("validation")
        rng = np.random.default_rng(3)
        dists = rng.dirichlet(np.ones(ds.n_categories), size=(4, len(rows)))
        pred = from_member_dists([ds.ids[r] for r in rows], dists)
        report = compute_report(pred, ds, "validation", "deep_ensemble", "soft", 42)
        assert 0.0 <= report.ece <= 1.0
        assert 0.0 <= report.brier <= 2.0
        assert 0.0 <= report.jsd_bits <= 1.0
        assert 0.0 <= report.tv <= 1.0
        for v in (report.auroc_total, report.auroc_epistemic, report.auroc_aleatoric):
            assert v is None or 0.0 <= v <= 1.0
        d = report.to_dict()
        assert d["method"] == "deep_ensemble"
        assert len(d["reliability"]) == 15

    def test_divergence_means_match_per_example(self):
        ds = category_dataset()
        rows = ds.split_indices("validation")
        rng = np.random.default_rng(4)
        dists = rng.dirichlet(np.ones(ds.n_categories), size=(2, len(rows)))
        pred = from_member_dists([ds.ids[r] for r in rows], dists)
        div = annotator_divergences(pred, ds.soft_labels[rows])
        assert div["jsd_bits"] == pytest.approx(div["per_example_jsd"].mean())
