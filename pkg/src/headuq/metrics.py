"""Evaluation metrics over predictive records.

Covers hard-label calibration (ECE / Brier / NLL / reliability bins),
divergence from the annotator distribution (JSD in bits, KL in nats, total
variation), the per-category rank correlation between aleatoric uncertainty
and annotator disagreement, selective prediction (risk-coverage AURC,
misclassification AUROC), accuracy / macro-F1, and the wrong-vs-right mean
entropy ratio. Everything is deterministic given its inputs; the bootstrap
is the only consumer of randomness and takes an explicit seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .dataio import Dataset
from .errors import DataValidationError
from .model import PROB_FLOOR
from .rngstream import derive_rng, derive_seed

DEFAULT_N_BINS = 15
REJECTORS = ("total", "epistemic", "aleatoric")


# ---------------------------------------------------------------------------
# calibration against the hard label


def _bin_index(confidence: np.ndarray, n_bins: int) -> np.ndarray:
    idx = np.floor(confidence * n_bins).astype(np.int64)
    return np.minimum(idx, n_bins - 1)


def reliability_bins(
    predictions, hard_labels: np.ndarray, n_bins: int = DEFAULT_N_BINS
) -> list[dict]:
    """Equal-width confidence bins on [0, 1]: count, mean confidence, accuracy.

    Empty bins are present with count 0 so the table always has n_bins rows.
    """
    if n_bins < 1:
        raise DataValidationError("n_bins must be >= 1")
    conf = predictions.confidence()
    correct = (predictions.argmax() == np.asarray(hard_labels)).astype(np.float64)
    idx = _bin_index(conf, n_bins)
    rows = []
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        rows.append(
            {
                "bin": b,
                "lo": b / n_bins,
                "hi": (b + 1) / n_bins,
                "count": count,
                "mean_confidence": float(conf[mask].mean()) if count else None,
                "accuracy": float(correct[mask].mean()) if count else None,
            }
        )
    return rows


def ece(predictions, hard_labels: np.ndarray, n_bins: int = DEFAULT_N_BINS) -> float:
    """Expected calibration error over equal-width bins; empty bins add 0."""
    bins = reliability_bins(predictions, hard_labels, n_bins)
    n = len(predictions)
    return math.fsum(
        row["count"] / n * abs(row["accuracy"] - row["mean_confidence"])
        for row in bins
        if row["count"] > 0
    )


def brier_multiclass(predictions, hard_labels: np.ndarray) -> float:
    p = predictions.mean_dist
    onehot = np.zeros_like(p)
    onehot[np.arange(len(p)), np.asarray(hard_labels)] = 1.0
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))


def nll_hard(predictions, hard_labels: np.ndarray) -> float:
    p = predictions.mean_dist[np.arange(len(predictions)), np.asarray(hard_labels)]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


# ---------------------------------------------------------------------------
# divergence from the annotator distribution


def jsd_bits(q: np.ndarray, p: np.ndarray) -> np.ndarray | float:
    """Jensen-Shannon divergence in bits (base-2), symmetric, bounded by 1."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    m = 0.5 * (q + p)

    def _kl2(a: np.ndarray) -> np.ndarray:
        ratio = np.where(a > 0.0, a / np.where(m > 0.0, m, 1.0), 1.0)
        return np.sum(np.where(a > 0.0, a * np.log2(ratio), 0.0), axis=1)

    out = 0.5 * _kl2(q) + 0.5 * _kl2(p)
    return float(out[0]) if out.shape == (1,) else out


def kl_nats(q: np.ndarray, p: np.ndarray) -> np.ndarray | float:
    """KL(q || p) in nats with the probability floor applied to p."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    p = np.maximum(np.atleast_2d(np.asarray(p, dtype=np.float64)), PROB_FLOOR)
    terms = np.where(q > 0.0, q * (np.log(np.where(q > 0.0, q, 1.0)) - np.log(p)), 0.0)
    out = np.sum(terms, axis=1)
    return float(out[0]) if out.shape == (1,) else out


def tv_distance(q: np.ndarray, p: np.ndarray) -> np.ndarray | float:
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    out = 0.5 * np.sum(np.abs(q - p), axis=1)
    return float(out[0]) if out.shape == (1,) else out


def annotator_divergences(predictions, soft_labels: np.ndarray) -> dict:
    """Split means (and per-example values) of JSD / KL / TV against q."""
    q = np.asarray(soft_labels, dtype=np.float64)
    p = predictions.mean_dist
    jsd = np.atleast_1d(jsd_bits(q, p))
    kl = np.atleast_1d(kl_nats(q, p))
    tv = np.atleast_1d(tv_distance(q, p))
    return {
        "jsd_bits": float(jsd.mean()),
        "kl_nats": float(kl.mean()),
        "tv": float(tv.mean()),
        "per_example_jsd": jsd,
        "per_example_kl": kl,
        "per_example_tv": tv,
    }


# ---------------------------------------------------------------------------
# rank statistics


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    x = np.asarray(x)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    sorted_x = x[order]
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation with average ranks; nan when degenerate."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DataValidationError("spearman_rho needs two aligned 1-d arrays, n >= 2")
    rx = average_ranks(x)
    ry = average_ranks(y)
    if np.array_equal(rx, ry):
        return 1.0
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float(np.dot(dx, dx))
    vy = float(np.dot(dy, dy))
    if vx == 0.0 or vy == 0.0:
        return float("nan")
    r = float(np.dot(dx, dy)) / math.sqrt(vx * vy)
    return max(-1.0, min(1.0, r))


def spearman_per_category(
    predictions,
    dataset: Dataset,
    split: str,
    min_support: int | None = None,
) -> tuple[float | None, list[dict]]:
    """Rank correlation between per-category mean aleatoric entropy and the
    per-category disagreement rate, over categories with enough support.

    Returns (rho, table); rho is None with fewer than 3 qualifying
    categories. The table lists every category with its split count, mean
    aleatoric entropy and disagreement rate, plus a ``qualifies`` flag.
    """
    if min_support is None:
        min_support = dataset.min_category_support
    if min_support < 1:
        raise DataValidationError("min_support must be >= 1")
    rows = dataset.split_indices(split)
    if len(rows) != len(predictions):
        raise DataValidationError(
            f"predictions cover {len(predictions)} examples but split "
            f"{split!r} has {len(rows)}"
        )
    labels = dataset.hard_labels[rows]
    table = []
    xs, ys = [], []
    for stats in dataset.category_stats:
        mask = labels == stats.category
        count = int(mask.sum())
        mean_ale = float(np.mean(predictions.h_ale[mask])) if count else None
        qualifies = count >= min_support and stats.disagreement_rate is not None
        table.append(
            {
                "category": stats.category,
                "name": stats.name,
                "count": count,
                "mean_aleatoric_entropy": mean_ale,
                "disagreement_rate": stats.disagreement_rate,
                "qualifies": bool(qualifies),
            }
        )
        if qualifies:
            xs.append(mean_ale)
            ys.append(stats.disagreement_rate)
    if len(xs) < 3:
        return None, table
    rho = spearman_rho(np.array(xs), np.array(ys))
    return (None if math.isnan(rho) else rho), table


def bootstrap_rho_ci(
    pairs: list[tuple[float, float]],
    n_boot: int = 1000,
    seed: int = 0,
) -> tuple[float, float] | None:
    """Percentile bootstrap CI of the rank correlation over category pairs.

    Resamples with undefined correlation (degenerate rank variance) are
    dropped; None when every resample is degenerate.
    """
    if len(pairs) < 3:
        raise DataValidationError("need at least 3 pairs to bootstrap")
    arr = np.asarray(pairs, dtype=np.float64)
    rng = derive_rng(seed, "rho-bootstrap")
    rhos = []
    for _ in range(n_boot):
        take = rng.integers(0, len(arr), size=len(arr))
        r = spearman_rho(arr[take, 0], arr[take, 1])
        if not math.isnan(r):
            rhos.append(r)
    if not rhos:
        return None
    lo, hi = np.percentile(rhos, [2.5, 97.5])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# selective prediction


def risk_coverage_curve(
    scores: np.ndarray, correctness: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Risk at every integer coverage 1..n, accepting most-confident first.

    ``scores`` are rejector scores (higher = rejected earlier); ties keep
    the stable input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    correctness = np.asarray(correctness)
    if len(scores) == 0:
        raise DataValidationError("empty input to risk-coverage")
    if scores.shape != correctness.shape:
        raise DataValidationError("scores and correctness must align")
    order = np.argsort(scores, kind="stable")
    errors = 1.0 - correctness[order].astype(np.float64)
    k = np.arange(1, len(scores) + 1, dtype=np.float64)
    risks = np.cumsum(errors) / k
    return k / len(scores), risks


def aurc(scores: np.ndarray, correctness: np.ndarray) -> float:
    """Mean selective risk over all integer coverage levels.

    Accumulated in exact rational arithmetic (error counts are integers),
    so hand cases like risks (0, 0, 1/3, 1/2) give exactly float(5/24) and
    the value is platform-independent.
    """
    scores = np.asarray(scores, dtype=np.float64)
    correctness = np.asarray(correctness)
    if len(scores) == 0:
        raise DataValidationError("empty input to risk-coverage")
    order = np.argsort(scores, kind="stable")
    errors = np.cumsum(1 - correctness[order].astype(np.int64))
    total = Fraction(0)
    for k in range(1, len(scores) + 1):
        total += Fraction(int(errors[k - 1]), k)
    return float(total / len(scores))


def auroc(scores: np.ndarray, correctness: np.ndarray) -> float | None:
    """P(score of a random misclassified > score of a random correct one);
    ties count 1/2 (Mann-Whitney). None when either class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    correctness = np.asarray(correctness).astype(bool)
    n_wrong = int((~correctness).sum())
    n_right = int(correctness.sum())
    if n_wrong == 0 or n_right == 0:
        return None
    ranks = average_ranks(scores)
    rank_sum_wrong = float(ranks[~correctness].sum())
    u = rank_sum_wrong - n_wrong * (n_wrong + 1) / 2.0
    return u / (n_wrong * n_right)


# ---------------------------------------------------------------------------
# sanity supplements


def accuracy_macro_f1(
    predictions, hard_labels: np.ndarray, n_categories: int
) -> tuple[float, float]:
    """Argmax accuracy and unweighted mean of per-class F1.

    A class with neither support nor predictions contributes F1 = 0 to the
    mean (kept in the denominator).
    """
    y = np.asarray(hard_labels)
    pred = predictions.argmax()
    acc = float(np.mean(pred == y))
    f1s = []
    for c in range(n_categories):
        tp = int(np.sum((pred == c) & (y == c)))
        fp = int(np.sum((pred == c) & (y != c)))
        fn = int(np.sum((pred != c) & (y == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return acc, float(np.mean(f1s))


def failure_entropy_ratio(predictions, hard_labels: np.ndarray) -> float | None:
    """Mean total entropy of misclassified over mean of correct examples."""
    correct = predictions.argmax() == np.asarray(hard_labels)
    if correct.all() or not correct.any():
        return None
    mean_wrong = float(np.mean(predictions.h_tot[~correct]))
    mean_right = float(np.mean(predictions.h_tot[correct]))
    if mean_right == 0.0:
        return None
    return mean_wrong / mean_right


def top_entropy_failure_ids(predictions, hard_labels: np.ndarray, k: int = 30) -> list[str]:
    """Ids of the k misclassified examples with the highest total entropy."""
    correct = predictions.argmax() == np.asarray(hard_labels)
    wrong_idx = np.flatnonzero(~correct)
    ranked = wrong_idx[np.argsort(-predictions.h_tot[wrong_idx], kind="stable")]
    return [predictions.ids[i] for i in ranked[:k]]


# ---------------------------------------------------------------------------
# bundled report


@dataclass
class MetricReport:
    method: str
    label_mode: str
    seed: int
    split: str
    n_examples: int
    ece: float
    brier: float
    nll: float
    jsd_bits: float
    kl_nats: float
    tv: float
    spearman_rho: float | None
    spearman_k: int
    spearman_ci: tuple[float, float] | None
    per_category: list[dict]
    aurc_total: float
    auroc_total: float | None
    aurc_epistemic: float
    auroc_epistemic: float | None
    aurc_aleatoric: float
    auroc_aleatoric: float | None
    accuracy: float
    macro_f1: float
    failure_entropy_ratio: float | None
    failure_top_ids: list[str]
    mean_total_entropy: float
    mean_aleatoric_entropy: float
    mean_epistemic_entropy: float
    reliability: list[dict] = field(default_factory=list)
    n_bins: int = DEFAULT_N_BINS
    prob_floor: float = PROB_FLOOR
    min_support: int = 0
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_report(
    predictions,
    dataset: Dataset,
    split: str,
    method: str,
    label_mode: str,
    seed: int,
    n_bins: int = DEFAULT_N_BINS,
) -> MetricReport:
    """Evaluate the full metric suite for one run on one split."""
    rows = dataset.split_indices(split)
    if len(rows) != len(predictions):
        raise DataValidationError("predictions do not cover the requested split")
    y = dataset.hard_labels[rows]
    q = dataset.soft_labels[rows]
    correct = predictions.argmax() == y

    div = annotator_divergences(predictions, q)
    rho, table = spearman_per_category(predictions, dataset, split)
    ci = None
    if rho is not None:
        pairs = [
            (r["mean_aleatoric_entropy"], r["disagreement_rate"])
            for r in table
            if r["qualifies"]
        ]
        ci = bootstrap_rho_ci(pairs, seed=derive_seed(seed, "report", split))
    acc, f1 = accuracy_macro_f1(predictions, y, dataset.n_categories)

    scores = {
        "total": predictions.h_tot,
        "epistemic": predictions.h_epi,
        "aleatoric": predictions.h_ale,
    }
    aurcs = {k: aurc(v, correct) for k, v in scores.items()}
    aurocs = {k: auroc(v, correct) for k, v in scores.items()}

    return MetricReport(
        method=method,
        label_mode=label_mode,
        seed=seed,
        split=split,
        n_examples=len(predictions),
        ece=ece(predictions, y, n_bins),
        brier=brier_multiclass(predictions, y),
        nll=nll_hard(predictions, y),
        jsd_bits=div["jsd_bits"],
        kl_nats=div["kl_nats"],
        tv=div["tv"],
        spearman_rho=rho,
        spearman_k=sum(1 for r in table if r["qualifies"]),
        spearman_ci=ci,
        per_category=table,
        aurc_total=aurcs["total"],
        auroc_total=aurocs["total"],
        aurc_epistemic=aurcs["epistemic"],
        auroc_epistemic=aurocs["epistemic"],
        aurc_aleatoric=aurcs["aleatoric"],
        auroc_aleatoric=aurocs["aleatoric"],
        accuracy=acc,
        macro_f1=f1,
        failure_entropy_ratio=failure_entropy_ratio(predictions, y),
        failure_top_ids=top_entropy_failure_ids(predictions, y),
        mean_total_entropy=float(np.mean(predictions.h_tot)),
        mean_aleatoric_entropy=float(np.mean(predictions.h_ale)),
        mean_epistemic_entropy=float(np.mean(predictions.h_epi)),
        reliability=reliability_bins(predictions, y, n_bins),
        n_bins=n_bins,
        min_support=dataset.min_category_support,
        notes={
            "hard_label_tie_break": "lowest category index among tied counts",
            "disagreement_rate": "mean of (1 - majority vote share) per hard-label group",
            "disagreement_rater_limit": 3,
            "entropy_unit": "nats",
            "jsd_unit": "bits",
        },
    )
