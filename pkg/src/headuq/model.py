"""Linear classification head: logits, softmax, soft-target cross-entropy.

Weights are stored float32 (matching the on-disk format); losses, entropies
and gradients are accumulated in float64 so finite-difference checks and
metric sums are stable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DataValidationError, NumericError

WEIGHTS_MAGIC = b"PHW1"

# Probabilities are clamped here before logs so NLL/KL stay finite.
PROB_FLOOR = 1e-12


@dataclass
class HeadWeights:
    """Affine map from a d-dim feature vector to C class logits."""

    w: np.ndarray  # (C, d) float32
    b: np.ndarray  # (C,)  float32

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float32)
        self.b = np.asarray(self.b, dtype=np.float32)
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise DataValidationError(
                f"inconsistent weight shapes {self.w.shape} / {self.b.shape}"
            )
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise NumericError("non-finite head weights")

    @property
    def n_categories(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    @property
    def n_parameters(self) -> int:
        return self.w.size + self.b.size

    def copy(self) -> "HeadWeights":
        return HeadWeights(self.w.copy(), self.b.copy())

    @classmethod
    def zeros(cls, n_categories: int, dim: int) -> "HeadWeights":
        return cls(np.zeros((n_categories, dim), np.float32), np.zeros(n_categories, np.float32))


def save_weights(weights: HeadWeights, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", weights.n_categories, weights.dim))
        fh.write(np.ascontiguousarray(weights.w, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(weights.b, dtype="<f4").tobytes())


def load_weights(path: str | Path) -> HeadWeights:
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12 or header[:4] != WEIGHTS_MAGIC:
            raise DataFormatError(f"{path}: not a head-weights file")
        c, d = struct.unpack("<II", header[4:12])
        payload = fh.read()
    expected = (c * d + c) * 4
    if len(payload) != expected:
        raise DataFormatError(f"{path}: payload {len(payload)} bytes, expected {expected}")
    w = np.frombuffer(payload[: c * d * 4], dtype="<f4").reshape(c, d)
    b = np.frombuffer(payload[c * d * 4 :], dtype="<f4")
    return HeadWeights(w.copy(), b.copy())


def logits(weights: HeadWeights, rows: np.ndarray, features: np.ndarray) -> np.ndarray:
    """z = x W^T + b for the selected feature rows, computed in float64."""
    x = features[np.asarray(rows, dtype=np.intp)]
    z = x.astype(np.float64) @ weights.w.astype(np.float64).T + weights.b.astype(np.float64)
    if not np.all(np.isfinite(z)):
        bad = int(np.flatnonzero(~np.isfinite(z).all(axis=1))[0])
        raise NumericError(f"non-finite logits at batch row {bad}")
    return z


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; accepts (C,) or (n, C)."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


@dataclass
class LossValue:
    """Batch-mean cross-entropy and, when inputs were supplied, its gradient."""

    value: float
    grad_logits: np.ndarray | None = None
    grad_w: np.ndarray | None = None
    grad_b: np.ndarray | None = None


def soft_cross_entropy(
    logit_batch: np.ndarray,
    q_batch: np.ndarray,
    inputs: np.ndarray | None = None,
) -> LossValue:
    """Mean over the batch of -sum_c q_c log p_c (natural log).

    With one-hot ``q_batch`` this is exactly the hard-label negative
    log-likelihood. The gradient on the logits is (p - q)/batch; when the
    input features are supplied it is propagated to (w, b) shapes.
    """
    z = np.atleast_2d(np.asarray(logit_batch, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q_batch, dtype=np.float64))
    if z.shape != q.shape:
        raise DataValidationError(f"logits {z.shape} and targets {q.shape} differ")
    if np.any(q < 0):
        raise DataValidationError("soft targets must be non-negative")

    n = z.shape[0]
    logp = log_softmax(z)
    value = float(-np.sum(q * logp) / n)

    p = np.exp(logp)
    grad_z = (p - q) / n
    out = LossValue(value=value, grad_logits=grad_z)
    if inputs is not None:
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        out.grad_w = grad_z.T @ x
        out.grad_b = grad_z.sum(axis=0)
    return out


def dropout_forward(
    weights: HeadWeights,
    rows: np.ndarray,
    features: np.ndarray,
    p: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Logits after inverted dropout on the inputs.

    One Bernoulli(1-p) mask per feature coordinate per example, rescaled by
    1/(1-p) so the expected pre-activation equals the unmasked one.
    Deterministic given the generator state.
    """
    if not 0.0 <= p < 1.0:
        raise DataValidationError(f"dropout rate must be in [0, 1), got {p}")
    x = features[np.asarray(rows, dtype=np.intp)].astype(np.float64)
    if p > 0.0:
        mask = rng.random(x.shape) >= p
        x = x * mask / (1.0 - p)
    z = x @ weights.w.astype(np.float64).T + weights.b.astype(np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits in dropout forward")
    return z
