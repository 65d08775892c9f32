"""Posterior-mean prediction and total/aleatoric/epistemic entropy split.

For member distributions p_1..p_M and mean p_bar = (1/M) sum_m p_m:

* total      = H[p_bar]
* aleatoric  = (1/M) sum_m H[p_m]      (data-intrinsic ambiguity)
* epistemic  = total - aleatoric       (member disagreement; equals the
  mutual information between the prediction and the sampled weights)

All entropies are in nats. A single-member posterior has epistemic
uncertainty exactly zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .dataio import Dataset
from .errors import DataValidationError
from .model import dropout_forward, logits, softmax
from .rngstream import derive_rng
from .trainers import METHOD_MC_DROPOUT, PosteriorSamples


def entropy(p: np.ndarray) -> np.ndarray | float:
    """Shannon entropy in nats; 0*log(0) contributes 0. Accepts (C,) or (n, C)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise DataValidationError("probability vector has negative components")
    sums = np.sum(p, axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise DataValidationError("probability vector does not sum to 1")
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    h = -np.sum(terms, axis=-1)
    return float(h) if h.ndim == 0 else h


@dataclass(frozen=True)
class PredictiveRecord:
    """Per-example slice of a Predictions batch."""

    id: str
    mean_dist: np.ndarray
    h_tot: float
    h_ale: float
    h_epi: float
    member_dists: np.ndarray | None = None


class Predictions(Sequence):
    """Predictive records for a set of rows, stored columnar.

    Behaves as a sequence of PredictiveRecord while keeping the vectorized
    arrays (mean (n, C), entropies (n,)) available to the metric suite.
    ``member_dists`` (M, n, C) is retained only when requested, since
    temperature fitting needs per-member distributions.
    """

    def __init__(
        self,
        ids: list[str],
        mean_dist: np.ndarray,
        h_tot: np.ndarray,
        h_ale: np.ndarray,
        h_epi: np.ndarray,
        member_dists: np.ndarray | None = None,
    ):
        self.ids = ids
        self.mean_dist = mean_dist
        self.h_tot = h_tot
        self.h_ale = h_ale
        self.h_epi = h_epi
        self.member_dists = member_dists

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> PredictiveRecord:
        return PredictiveRecord(
            id=self.ids[i],
            mean_dist=self.mean_dist[i],
            h_tot=float(self.h_tot[i]),
            h_ale=float(self.h_ale[i]),
            h_epi=float(self.h_epi[i]),
            member_dists=None if self.member_dists is None else self.member_dists[:, i, :],
        )

    def __iter__(self) -> Iterator[PredictiveRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n_categories(self) -> int:
        return self.mean_dist.shape[1]

    def confidence(self) -> np.ndarray:
        return np.max(self.mean_dist, axis=1)

    def argmax(self) -> np.ndarray:
        return np.argmax(self.mean_dist, axis=1)


def from_member_dists(
    ids: list[str], member_dists: np.ndarray, keep_members: bool = False
) -> Predictions:
    """Build Predictions from an (M, n, C) stack of member distributions."""
    member_dists = np.asarray(member_dists, dtype=np.float64)
    if member_dists.ndim != 3:
        raise DataValidationError("member distributions must have shape (M, n, C)")
    m = member_dists.shape[0]
    mean = member_dists.mean(axis=0)
    h_tot = entropy(mean)
    if m == 1:
        # Single member: epistemic is structurally zero, not merely small.
        h_ale = h_tot.copy()
        h_epi = np.zeros_like(h_tot)
    else:
        h_ale = np.mean(
            np.stack([entropy(member_dists[j]) for j in range(m)]), axis=0
        )
        h_epi = h_tot - h_ale
    return Predictions(
        ids=ids,
        mean_dist=mean,
        h_tot=np.atleast_1d(h_tot),
        h_ale=np.atleast_1d(h_ale),
        h_epi=np.atleast_1d(h_epi),
        member_dists=member_dists if keep_members else None,
    )


def member_distributions(
    samples: PosteriorSamples,
    rows: np.ndarray,
    features: np.ndarray,
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
) -> np.ndarray:
    """(M, n, C) member distributions; logits divided by ``temperature``.

    For mc_dropout posteriors the members are stochastic forward passes and
    ``rng`` drives the masks (independent per example per pass).
    """
    if temperature <= 0:
        raise DataValidationError(f"temperature must be positive, got {temperature}")
    rows = np.asarray(rows, dtype=np.intp)
    if samples.method == METHOD_MC_DROPOUT:
        if rng is None:
            rng = derive_rng(samples.seed, samples.method, samples.label_mode, "predict")
        head = samples.members[0]
        stack = [
            softmax(
                dropout_forward(head, rows, features, samples.dropout_rate, rng)
                / temperature
            )
            for _ in range(samples.n_passes)
        ]
    else:
        stack = [
            softmax(logits(member, rows, features) / temperature)
            for member in samples.members
        ]
    return np.stack(stack)


def predict(
    samples: PosteriorSamples,
    rows: np.ndarray,
    features: np.ndarray,
    rng: np.random.Generator | None = None,
    ids: list[str] | None = None,
    keep_members: bool = False,
    temperature: float = 1.0,
) -> Predictions:
    """Posterior-mean predictions with the entropy decomposition."""
    rows = np.asarray(rows, dtype=np.intp)
    dists = member_distributions(samples, rows, features, rng, temperature)
    if ids is None:
        ids = [str(int(r)) for r in rows]
    return from_member_dists(ids, dists, keep_members=keep_members)


def predict_dataset(
    samples: PosteriorSamples,
    dataset: Dataset,
    split: str,
    rng: np.random.Generator | None = None,
    keep_members: bool = False,
    temperature: float = 1.0,
) -> Predictions:
    rows = dataset.split_indices(split)
    ids = [dataset.ids[r] for r in rows]
    return predict(
        samples,
        rows,
        dataset.features,
        rng=rng,
        ids=ids,
        keep_members=keep_members,
        temperature=temperature,
    )


def mutual_information(member_dists: np.ndarray) -> np.ndarray:
    """Direct MI computation: (1/M) sum_m KL(p_m || p_bar), in nats."""
    member_dists = np.asarray(member_dists, dtype=np.float64)
    mean = member_dists.mean(axis=0)
    ratio_log = np.where(
        member_dists > 0.0,
        np.log(np.where(member_dists > 0.0, member_dists, 1.0))
        - np.log(np.where(mean > 0.0, mean, 1.0)),
        0.0,
    )
    kl = np.sum(member_dists * ratio_log, axis=-1)
    return kl.mean(axis=0)


def write_records_jsonl(predictions: Predictions, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in predictions:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "mean_dist": [float(v) for v in rec.mean_dist],
                        "h_tot": rec.h_tot,
                        "h_ale": rec.h_ale,
                        "h_epi": rec.h_epi,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
