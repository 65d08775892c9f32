"""Post-hoc temperature scaling.

A single positive scalar divides every member's logits before the softmax
and the member average; it is fitted by minimizing hard-label NLL on the
validation split (golden-section over log T with a coarse-grid fallback)
and then applied unchanged to other splits. Fitting can only keep or lower
the validation NLL because T = 1 is always a candidate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataValidationError
from .metrics import spearman_rho
from .model import PROB_FLOOR
from .trainers import PosteriorSamples
from .uncertainty import Predictions, predict

T_BRACKET = (0.05, 10.0)
T_TOLERANCE = 1e-4
FALLBACK_GRID_POINTS = 50


@dataclass
class TemperatureFit:
    t_opt: float
    val_nll_before: float
    val_nll_after: float
    method: str | None = None
    label_mode: str | None = None
    seed: int | None = None
    fallback_to_identity: bool = False
    used_grid: bool = False
    bracket: tuple[float, float] = T_BRACKET
    tolerance: float = T_TOLERANCE

    def to_dict(self) -> dict:
        return asdict(self)


def _nll_at(member_logits: np.ndarray, hard_labels: np.ndarray, temperature: float) -> float:
    z = member_logits / temperature
    shifted = z - z.max(axis=2, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=2, keepdims=True)
    mean = p.mean(axis=0)
    picked = mean[np.arange(mean.shape[0]), hard_labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def fit_temperature(
    member_logits: np.ndarray,
    hard_labels: np.ndarray,
    method: str | None = None,
    label_mode: str | None = None,
    seed: int | None = None,
) -> TemperatureFit:
    """Fit the scalar temperature on validation member logits.

    ``member_logits`` has shape (M, n, C); log member probabilities work
    identically since the softmax is shift-invariant per row.
    """
    member_logits = np.asarray(member_logits, dtype=np.float64)
    if member_logits.ndim != 3:
        raise DataValidationError("member logits must have shape (M, n, C)")
    hard_labels = np.asarray(hard_labels)
    if hard_labels.shape[0] != member_logits.shape[1]:
        raise DataValidationError("labels do not align with logits")

    def objective(u: float) -> float:
        return _nll_at(member_logits, hard_labels, math.exp(u))

    lo, hi = math.log(T_BRACKET[0]), math.log(T_BRACKET[1])
    f_lo, f_hi = objective(lo), objective(hi)
    mid = 0.5 * (lo + hi)
    f_mid = objective(mid)

    used_grid = False
    if f_mid <= min(f_lo, f_hi):
        u_best = _golden_section(objective, lo, hi)
    else:
        # Bracket check failed: no interior point below both ends, so the
        # objective is not usably unimodal here. Coarse grid instead.
        used_grid = True
        grid = np.linspace(lo, hi, FALLBACK_GRID_POINTS)
        vals = [objective(u) for u in grid]
        u_best = float(grid[int(np.argmin(vals))])

    nll_before = _nll_at(member_logits, hard_labels, 1.0)
    t_candidate = math.exp(u_best)
    nll_candidate = _nll_at(member_logits, hard_labels, t_candidate)

    if nll_candidate < nll_before:
        return TemperatureFit(
            t_opt=t_candidate,
            val_nll_before=nll_before,
            val_nll_after=nll_candidate,
            method=method,
            label_mode=label_mode,
            seed=seed,
            used_grid=used_grid,
        )
    return TemperatureFit(
        t_opt=1.0,
        val_nll_before=nll_before,
        val_nll_after=nll_before,
        method=method,
        label_mode=label_mode,
        seed=seed,
        fallback_to_identity=True,
        used_grid=used_grid,
    )


def _golden_section(fn, lo: float, hi: float) -> float:
    """Minimize a unimodal function of log-temperature.

    Runs until the bracket, mapped back to temperature, is narrower than
    the absolute tolerance.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while math.exp(b) - math.exp(a) > T_TOLERANCE:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def apply_temperature(
    samples: PosteriorSamples,
    temperature: float,
    rows: np.ndarray,
    features: np.ndarray,
    rng: np.random.Generator | None = None,
    ids: list[str] | None = None,
    keep_members: bool = False,
) -> Predictions:
    """Predictions with per-member logits divided by ``temperature``.

    T = 1 reproduces the uncalibrated prediction path bit for bit.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    return predict(
        samples,
        rows,
        features,
        rng=rng,
        ids=ids,
        keep_members=keep_members,
        temperature=temperature,
    )


def rank_stability(before: Predictions, after: Predictions) -> tuple[float, float]:
    """Spearman correlations (top-1 confidence, total entropy) across scaling."""
    if len(before) != len(after):
        raise DataValidationError("prediction sets differ in length")
    rho_conf = spearman_rho(before.confidence(), after.confidence())
    rho_entropy = spearman_rho(before.h_tot, after.h_tot)
    return rho_conf, rho_entropy
