"""Pool-based active learning with posterior-derived acquisition.

Each iteration retrains the MCMC head from scratch on the labeled set,
scores the remaining pool, and moves the top-scored batch into the labeled
set (ties broken by ascending example index). Pool management is identical
across strategies; only the scores differ, so forcing equal scores yields
identical selections. Per-class acquisition histograms are first-class
output because mutual-information acquisition can concentrate on rare
classes under long-tail label distributions.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Dataset
from .errors import ConfigError
from .metrics import accuracy_macro_f1
from .rngstream import derive_rng, derive_seed
from .trainers import SamplerConfig, train_csgmcmc
from .uncertainty import Predictions, predict

log = logging.getLogger(__name__)

STRATEGIES = ("bald", "entropy", "random")

# Scaled-down sampler so a 20-iteration loop stays tractable; the canonical
# setting can be passed explicitly for full-fidelity runs.
DEFAULT_AL_SAMPLER = SamplerConfig(
    n_cycles=4, cycle_length=500, burn_in_cycles=1, samples_per_cycle=5
)


@dataclass(frozen=True)
class ALConfig:
    strategy: str
    seed: int
    n_iterations: int = 20
    batch_per_iter: int = 500
    initial_seed_size: int = 500
    label_mode: str = "soft"
    sampler: SamplerConfig = DEFAULT_AL_SAMPLER
    exclude_categories: tuple[int, ...] = ()

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; pick from {STRATEGIES}")
        if self.n_iterations < 1 or self.batch_per_iter < 1 or self.initial_seed_size < 1:
            raise ConfigError("iteration counts and batch sizes must be positive")
        self.sampler.validate()


@dataclass
class LearningCurve:
    strategy: str
    seed: int
    rows: list[dict] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "n_labeled", "accuracy", "macro_f1"])
            for row in self.rows:
                writer.writerow(
                    [row["iteration"], row["n_labeled"], row["accuracy"], row["macro_f1"]]
                )

    def write_histograms(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "strategy": self.strategy,
                    "seed": self.seed,
                    "acquired_class_counts": [
                        row["acquired_class_counts"] for row in self.rows
                    ],
                },
                fh,
                sort_keys=True,
            )
            fh.write("\n")


def acquisition_scores(
    predictions: Predictions, strategy: str, rng: np.random.Generator
) -> np.ndarray:
    """Per-pool-example score; larger means acquired earlier."""
    if strategy == "bald":
        scores = predictions.h_epi
        if np.max(np.abs(scores)) < 1e-12:
            log.warning(
                "bald acquisition over a single-member posterior: all scores "
                "are zero, selection degenerates to stable order"
            )
        return scores
    if strategy == "entropy":
        return predictions.h_tot
    if strategy == "random":
        return rng.random(len(predictions))
    raise ConfigError(f"unknown strategy {strategy!r}")


def _stratified_initial(
    labels: np.ndarray, candidates: np.ndarray, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Class-proportional draw of the initial labeled set (largest remainder)."""
    classes, counts = np.unique(labels[candidates], return_counts=True)
    frac = size / len(candidates)
    quotas = np.floor(counts * frac).astype(int)
    remainders = counts * frac - quotas
    short = size - quotas.sum()
    for idx in np.argsort(-remainders, kind="stable")[:short]:
        quotas[idx] += 1
    chosen: list[np.ndarray] = []
    for cls, quota in zip(classes, quotas):
        members = candidates[labels[candidates] == cls]
        take = rng.permutation(len(members))[:quota]
        chosen.append(members[take])
    return np.sort(np.concatenate(chosen))


def _top_k(pool: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    # Stable descending sort: ties resolved by ascending pool position,
    # hence ascending example index since the pool is kept sorted.
    order = np.argsort(-scores, kind="stable")
    return pool[order[:k]]


def run_al_loop(dataset: Dataset, config: ALConfig) -> LearningCurve:
    """Run the full acquisition loop; deterministic given (config, seed)."""
    config.validate()
    train_rows = dataset.split_indices("train")
    val_rows = dataset.split_indices("validation")
    if config.exclude_categories:
        excluded = np.isin(dataset.hard_labels, config.exclude_categories)
        train_rows = train_rows[~excluded[train_rows]]
        val_rows = val_rows[~excluded[val_rows]]
    needed = config.initial_seed_size + config.n_iterations * config.batch_per_iter
    if needed > len(train_rows):
        raise ConfigError(
            f"loop needs {needed} train examples but only {len(train_rows)} available"
        )

    init_rng = derive_rng(config.seed, "al", "init")
    labeled = _stratified_initial(
        dataset.hard_labels, train_rows, config.initial_seed_size, init_rng
    )
    pool = np.setdiff1d(train_rows, labeled)

    val_labels = dataset.hard_labels[val_rows]
    curve = LearningCurve(strategy=config.strategy, seed=config.seed)

    for it in range(config.n_iterations):
        if len(pool) < config.batch_per_iter:
            raise ConfigError(f"pool exhausted before iteration {it}")
        assert len(labeled) + len(pool) == len(train_rows)
        assert len(np.intersect1d(labeled, pool)) == 0

        posterior = train_csgmcmc(
            dataset,
            config.label_mode,
            config.sampler,
            seed=derive_seed(config.seed, "al", it, "train"),
            train_rows=labeled,
        )
        pool_pred = predict(posterior, pool, dataset.features)
        scores = acquisition_scores(
            pool_pred, config.strategy, derive_rng(config.seed, "al", it, "acquire")
        )
        acquired = _top_k(pool, scores, config.batch_per_iter)

        labeled = np.sort(np.concatenate([labeled, acquired]))
        pool = np.setdiff1d(pool, acquired)

        val_pred = predict(posterior, val_rows, dataset.features)
        acc, f1 = accuracy_macro_f1(val_pred, val_labels, dataset.n_categories)
        curve.rows.append(
            {
                "iteration": it,
                "n_labeled": int(len(labeled)),
                "n_pool": int(len(pool)),
                "accuracy": acc,
                "macro_f1": f1,
                "acquired_class_counts": np.bincount(
                    dataset.hard_labels[acquired], minlength=dataset.n_categories
                ).tolist(),
            }
        )
    return curve
