"""Dataset ingestion: frozen-feature matrices, annotator votes, label views.

The core never sees raw text. An example is a row of a precomputed feature
matrix plus the per-annotator category votes for that row. Hard labels
(majority vote, lowest index wins ties) and soft labels (normalized vote
counts) are always derived from the votes at load time, never read from
disk, so the two views can never drift apart.

File formats
------------
* feature file: magic ``PHFM``, version u32=1, n u64, d u64, then n*d
  little-endian float32 values, row-major.
* examples file: JSON Lines with fields ``id``, ``split``, ``votes``
  (one category index per annotator), optional ``high_disagreement``
  (default false) and optional ``text`` (ignored here). Line k of the
  file annotates row k of the feature file.
* category-names file: JSON array of C strings.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError, DataValidationError

FEATURE_MAGIC = b"PHFM"
FEATURE_VERSION = 1

SPLITS = ("train", "validation", "test")

CANONICAL_SPLIT_SIZES = {"train": 43_410, "validation": 5_426, "test": 5_427}
CANONICAL_N_CATEGORIES = 28
CANONICAL_VOTE_TOTALS = (3, 4, 5)

# Per-category metrics are reported only for categories with at least this
# many examples in the split under evaluation.
MIN_CATEGORY_SUPPORT = 30

# Disagreement rates default to the votes of the first raters only, so the
# rate is comparable across examples that later received extra raters.
DEFAULT_RATER_LIMIT = 3


@dataclass(frozen=True)
class VoteVector:
    """Per-category vote counts for one example."""

    counts: tuple[int, ...]
    total: int

    def __post_init__(self):
        if self.total != sum(self.counts):
            raise DataValidationError(
                f"vote total {self.total} != sum of counts {sum(self.counts)}"
            )


@dataclass(frozen=True)
class Example:
    id: str
    row: int
    votes: VoteVector
    vote_sequence: tuple[int, ...]  # rater order as read from the file
    hard_label: int
    soft_label: tuple[float, ...]
    split: str
    high_disagreement: bool


@dataclass(frozen=True)
class CategoryStats:
    category: int
    name: str
    train_count: int
    disagreement_rate: float | None


@dataclass
class Dataset:
    """Immutable view of one corpus; safe for concurrent reads.

    Vectorized columns (``hard_labels``, ``soft_labels``, ...) mirror the
    per-example records for numpy consumers.
    """

    features: np.ndarray  # (n, d) float32
    examples: list[Example]
    n_categories: int
    category_names: tuple[str, ...]
    category_stats: list[CategoryStats] = field(default_factory=list)
    load_warnings: list[str] = field(default_factory=list)

    ids: list[str] = field(default_factory=list)
    hard_labels: np.ndarray = None
    soft_labels: np.ndarray = None
    split_codes: np.ndarray = None
    high_disagreement: np.ndarray = None
    vote_counts: np.ndarray = None
    vote_totals: np.ndarray = None

    min_category_support: int = MIN_CATEGORY_SUPPORT

    @property
    def n_examples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def split_sizes(self) -> dict[str, int]:
        return {
            s: int(np.sum(self.split_codes == k)) for k, s in enumerate(SPLITS)
        }

    def split_indices(self, split: str) -> np.ndarray:
        return subset_view(self, split=split)


def _hard_label(counts: Sequence[int]) -> int:
    # np.argmax picks the first maximum: lowest category index wins ties.
    return int(np.argmax(counts))


def build_dataset(
    features: np.ndarray,
    ids: Sequence[str],
    vote_lists: Sequence[Sequence[int]],
    splits: Sequence[str],
    high_disagreement: Sequence[bool],
    category_names: Sequence[str],
    expect_canonical: bool = False,
) -> Dataset:
    """Assemble and validate a Dataset from in-memory columns.

    Shared by the file loader and the synthetic generator so every Dataset
    passes the same invariant checks.
    """
    features = np.ascontiguousarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise DataValidationError("feature matrix must be 2-dimensional")
    if not np.all(np.isfinite(features)):
        bad = int(np.argwhere(~np.isfinite(features).all(axis=1))[0][0])
        raise DataValidationError(f"non-finite feature values at row {bad}")

    n = features.shape[0]
    if not (len(ids) == len(vote_lists) == len(splits) == len(high_disagreement)):
        raise DataValidationError("example columns have mismatched lengths")
    if len(ids) != n:
        raise DataValidationError(
            f"row-count mismatch: {len(ids)} example records for {n} feature rows"
        )

    names = tuple(str(s) for s in category_names)
    n_cat = len(names)
    if n_cat < 2:
        raise DataValidationError("need at least 2 categories")

    warnings: list[str] = []
    seen_ids: set[str] = set()

    examples: list[Example] = []
    hard = np.empty(n, dtype=np.int64)
    soft = np.zeros((n, n_cat), dtype=np.float64)
    split_codes = np.empty(n, dtype=np.int8)
    hd_arr = np.zeros(n, dtype=bool)
    counts_arr = np.zeros((n, n_cat), dtype=np.int32)
    totals = np.empty(n, dtype=np.int32)

    for i, (ex_id, votes, split, hd) in enumerate(
        zip(ids, vote_lists, splits, high_disagreement)
    ):
        ex_id = str(ex_id)
        if ex_id in seen_ids:
            raise DataValidationError(f"duplicate example id {ex_id!r}")
        seen_ids.add(ex_id)

        if split not in SPLITS:
            raise DataValidationError(f"example {ex_id!r}: unknown split {split!r}")
        if len(votes) < 1:
            raise DataValidationError(f"example {ex_id!r}: empty vote list")

        counts = [0] * n_cat
        for v in votes:
            v = int(v)
            if not 0 <= v < n_cat:
                raise DataValidationError(
                    f"example {ex_id!r}: vote index {v} out of range for "
                    f"{n_cat} categories"
                )
            counts[v] += 1
        total = len(votes)

        hd = bool(hd)
        if hd and split != "validation":
            msg = (
                f"example {ex_id!r}: high_disagreement flag on {split} split"
            )
            if expect_canonical:
                raise DataValidationError(msg)
            warnings.append(msg)
        if expect_canonical and total not in CANONICAL_VOTE_TOTALS:
            raise DataValidationError(
                f"example {ex_id!r}: {total} votes outside canonical range "
                f"{CANONICAL_VOTE_TOTALS}"
            )

        y = _hard_label(counts)
        q = tuple(c / total for c in counts)

        examples.append(
            Example(
                id=ex_id,
                row=i,
                votes=VoteVector(counts=tuple(counts), total=total),
                vote_sequence=tuple(int(v) for v in votes),
                hard_label=y,
                soft_label=q,
                split=split,
                high_disagreement=hd,
            )
        )
        hard[i] = y
        soft[i] = q
        split_codes[i] = SPLITS.index(split)
        hd_arr[i] = hd
        counts_arr[i] = counts
        totals[i] = total

    ds = Dataset(
        features=features,
        examples=examples,
        n_categories=n_cat,
        category_names=names,
        load_warnings=warnings,
        ids=[e.id for e in examples],
        hard_labels=hard,
        soft_labels=soft,
        split_codes=split_codes,
        high_disagreement=hd_arr,
        vote_counts=counts_arr,
        vote_totals=totals,
    )

    if expect_canonical:
        sizes = ds.split_sizes
        for s, want in CANONICAL_SPLIT_SIZES.items():
            if sizes[s] != want:
                raise DataValidationError(
                    f"canonical corpus expected {want} {s} examples, got {sizes[s]}"
                )
        if n_cat != CANONICAL_N_CATEGORIES:
            raise DataValidationError(
                f"canonical corpus expected {CANONICAL_N_CATEGORIES} categories, "
                f"got {n_cat}"
            )

    ds.category_stats = compute_disagreement_rates(ds)
    return ds


def read_feature_file(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(24)
        if len(header) < 24:
            raise DataFormatError(f"{path}: truncated header")
        magic = header[:4]
        if magic != FEATURE_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}"
            )
        version, n, d = struct.unpack("<IQQ", header[4:24])
        if version != FEATURE_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    expected = n * d * 4
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    return np.ascontiguousarray(values)


def write_feature_file(path: str | Path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IQQ", FEATURE_VERSION, n, d))
        fh.write(features.tobytes())


def load_dataset(
    feature_path: str | Path,
    examples_path: str | Path,
    categories_path: str | Path | None = None,
    expect_canonical: bool = False,
) -> Dataset:
    """Load and validate a corpus from its three files.

    When ``categories_path`` is omitted the category count is inferred from
    the largest vote index and names are autogenerated.
    """
    features = read_feature_file(feature_path)

    ids: list[str] = []
    vote_lists: list[list[int]] = []
    splits: list[str] = []
    hd_flags: list[bool] = []
    with open(examples_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(
                    f"{examples_path}: line {lineno} is not valid JSON: {exc}"
                ) from exc
            for key in ("id", "split", "votes"):
                if key not in rec:
                    raise DataFormatError(
                        f"{examples_path}: line {lineno} missing field {key!r}"
                    )
            ids.append(str(rec["id"]))
            vote_lists.append([int(v) for v in rec["votes"]])
            splits.append(str(rec["split"]))
            hd_flags.append(bool(rec.get("high_disagreement", False)))

    if categories_path is not None:
        with open(categories_path, "r", encoding="utf-8") as fh:
            names = json.load(fh)
        if not isinstance(names, list) or not all(isinstance(s, str) for s in names):
            raise DataFormatError(f"{categories_path}: expected a JSON array of strings")
    else:
        n_cat = 1 + max((max(v) for v in vote_lists if v), default=0)
        names = [f"cat_{c:02d}" for c in range(n_cat)]

    return build_dataset(
        features=features,
        ids=ids,
        vote_lists=vote_lists,
        splits=splits,
        high_disagreement=hd_flags,
        category_names=names,
        expect_canonical=expect_canonical,
    )


def save_dataset(
    dataset: Dataset,
    feature_path: str | Path,
    examples_path: str | Path,
    categories_path: str | Path,
) -> None:
    """Write a Dataset back out in the three-file exchange format."""
    write_feature_file(feature_path, dataset.features)
    with open(examples_path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            rec = {
                "id": ex.id,
                "split": ex.split,
                "votes": list(ex.vote_sequence),
                "high_disagreement": ex.high_disagreement,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(categories_path, "w", encoding="utf-8") as fh:
        json.dump(list(dataset.category_names), fh)
        fh.write("\n")


def compute_disagreement_rates(
    dataset: Dataset, rater_limit: int | None = DEFAULT_RATER_LIMIT
) -> list[CategoryStats]:
    """Per-category mean of (1 - majority vote share), grouped by hard label.

    A pure function of the votes: repeated calls, in any example order,
    return identical values (sums use exact fsum). ``rater_limit`` caps how
    many votes per example enter the rate; the grouping always uses the
    full-vote hard label. Categories with no examples carry ``None``.
    """
    per_cat: dict[int, list[float]] = {c: [] for c in range(dataset.n_categories)}
    for ex in dataset.examples:
        if rater_limit is not None and ex.votes.total > rater_limit:
            first = ex.vote_sequence[:rater_limit]
            limited = [0] * dataset.n_categories
            for v in first:
                limited[v] += 1
            share = max(limited) / len(first)
        else:
            share = max(ex.votes.counts) / ex.votes.total
        per_cat[ex.hard_label].append(1.0 - share)

    train_counts = np.bincount(
        dataset.hard_labels[dataset.split_codes == SPLITS.index("train")],
        minlength=dataset.n_categories,
    )
    stats = []
    for c in range(dataset.n_categories):
        vals = sorted(per_cat[c])  # fixed order: independent of example order
        rate = math.fsum(vals) / len(vals) if vals else None
        stats.append(
            CategoryStats(
                category=c,
                name=dataset.category_names[c],
                train_count=int(train_counts[c]),
                disagreement_rate=rate,
            )
        )
    return stats


def subset_view(
    dataset: Dataset,
    split: str | None = None,
    high_disagreement: bool | None = None,
    category: int | None = None,
) -> np.ndarray:
    """Stable, sorted example-index list matching the filter. Empty allowed."""
    mask = np.ones(dataset.n_examples, dtype=bool)
    if split is not None:
        if split not in SPLITS:
            raise DataValidationError(f"unknown split {split!r}")
        mask &= dataset.split_codes == SPLITS.index(split)
    if high_disagreement is not None:
        mask &= dataset.high_disagreement == bool(high_disagreement)
    if category is not None:
        if not 0 <= category < dataset.n_categories:
            raise DataValidationError(f"category {category} out of range")
        mask &= dataset.hard_labels == category
    return np.flatnonzero(mask)
