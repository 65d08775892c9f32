"""Synthetic corpora with a known annotator-noise model.

Examples are Gaussian clusters around per-class prototypes; every class c
has an ambiguity level eps_c and annotators vote i.i.d. from

    q*(z) = (1 - eps_z) * onehot(z) + eps_z * uniform.

Low-eps classes are near-unanimous, high-eps classes split their votes, so
per-class disagreement rates are ordered by construction and the optimal
soft predictor is recoverable from the features. Deterministic given the
config.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import build_dataset, save_dataset
from .errors import ConfigError
from .rngstream import derive_rng


@dataclass(frozen=True)
class SyntheticConfig:
    n_examples: int = 5000
    n_categories: int = 3
    dim: int = 16
    n_annotators: int = 3
    seed: int = 0
    # one ambiguity level per class; padded cyclically if classes exceed it
    ambiguity: tuple[float, ...] = (0.05, 0.35, 0.65)
    class_separation: float = 3.0
    feature_noise: float = 1.0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def validate(self) -> None:
        if self.n_examples < 10 or self.n_categories < 2 or self.dim < 1:
            raise ConfigError("synthetic corpus too small")
        if self.n_annotators < 1:
            raise ConfigError("need at least one annotator")
        if any(not 0.0 <= e < 1.0 for e in self.ambiguity):
            raise ConfigError("ambiguity levels must lie in [0, 1)")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")


@dataclass(frozen=True)
class GenerativeInfo:
    """Ground truth of the noise model: per-example true class and the
    annotator distribution the votes were drawn from."""

    true_class: np.ndarray  # (n,)
    annotator_dist: np.ndarray  # (n, C)
    class_ambiguity: np.ndarray  # (C,)


def make_synthetic_dataset(
    config: SyntheticConfig, return_generative: bool = False
):
    config.validate()
    rng = derive_rng(config.seed, "synthetic")
    c, d, n = config.n_categories, config.dim, config.n_examples

    prototypes = config.class_separation * rng.standard_normal((c, d))
    true_class = rng.integers(0, c, size=n)
    features = prototypes[true_class] + config.feature_noise * rng.standard_normal((n, d))

    eps = np.array([config.ambiguity[z % len(config.ambiguity)] for z in range(c)])
    vote_dist = np.full((c, c), 0.0)
    for z in range(c):
        vote_dist[z] = eps[z] / c
        vote_dist[z, z] += 1.0 - eps[z]

    vote_lists = []
    for i in range(n):
        votes = rng.choice(c, size=config.n_annotators, p=vote_dist[true_class[i]])
        vote_lists.append([int(v) for v in votes])

    order = rng.permutation(n)
    n_train = int(round(config.split_fractions[0] * n))
    n_val = int(round(config.split_fractions[1] * n))
    splits = [""] * n
    for pos, idx in enumerate(order):
        if pos < n_train:
            splits[idx] = "train"
        elif pos < n_train + n_val:
            splits[idx] = "validation"
        else:
            splits[idx] = "test"

    # Validation examples whose raters disagree mirror the resolve-by-more-
    # raters subset of production corpora.
    hd_flags = [
        splits[i] == "validation" and len(set(vote_lists[i])) > 1 for i in range(n)
    ]

    dataset = build_dataset(
        features=features.astype(np.float32),
        ids=[f"syn-{i:06d}" for i in range(n)],
        vote_lists=vote_lists,
        splits=splits,
        high_disagreement=hd_flags,
        category_names=[f"class_{k}" for k in range(c)],
    )
    if return_generative:
        info = GenerativeInfo(
            true_class=true_class,
            annotator_dist=vote_dist[true_class],
            class_ambiguity=eps,
        )
        return dataset, info
    return dataset


def write_synthetic_corpus(
    config: SyntheticConfig, out_dir: str | Path
) -> dict[str, str]:
    """Generate and persist a corpus in the exchange formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = make_synthetic_dataset(config)
    paths = {
        "features": str(out / "features.phfm"),
        "examples": str(out / "examples.jsonl"),
        "categories": str(out / "categories.json"),
    }
    save_dataset(dataset, paths["features"], paths["examples"], paths["categories"])
    return paths
