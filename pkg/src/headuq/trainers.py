"""Posterior construction for the four head-training methods.

* ``deterministic`` - one AdamW-trained head (epistemic uncertainty is
  structurally zero at inference).
* ``mc_dropout``    - the same head trained with input dropout, evaluated
  with stochastic forward passes.
* ``deep_ensemble`` - independently initialised heads trained on different
  shuffle streams.
* ``csgmcmc``       - cyclical stochastic-gradient MCMC: a cosine step-size
  schedule alternates a noise-free exploration phase with a Langevin
  sampling phase inside every cycle; snapshots taken in the sampling phase
  of post-burn-in cycles form the posterior sample set.

The sampler and the AdamW loop both operate on a flat float64 parameter
vector through a gradient callback, so their update rules can be exercised
directly on analytically tractable targets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .dataio import Dataset
from .errors import ConfigError, TrainingDivergedError
from .model import (
    PROB_FLOOR,
    HeadWeights,
    load_weights,
    save_weights,
    soft_cross_entropy,
    softmax,
)
from .rngstream import derive_rng, derive_seed

METHOD_DETERMINISTIC = "deterministic"
METHOD_MC_DROPOUT = "mc_dropout"
METHOD_ENSEMBLE = "deep_ensemble"
METHOD_CSGMCMC = "csgmcmc"
ALL_METHODS = (
    METHOD_DETERMINISTIC,
    METHOD_MC_DROPOUT,
    METHOD_ENSEMBLE,
    METHOD_CSGMCMC,
)
LABEL_MODES = ("hard", "soft")


@dataclass(frozen=True)
class SamplerConfig:
    """Cyclical SG-MCMC hyperparameters (defaults are the canonical setting)."""

    n_cycles: int = 8
    cycle_length: int = 2500
    sampling_fraction: float = 0.25
    samples_per_cycle: int = 5
    burn_in_cycles: int = 2
    initial_step_size: float = 1e-4
    temperature: float = 1.0
    weight_decay: float = 1e-4  # Gaussian-prior precision
    posterior_scale: int | None = None  # defaults to the training-set size
    clip_norm: float = 5.0
    batch_size: int = 32
    disable_noise: bool = False  # diagnostic switch: drop the Langevin term
    # None draws theta_0 from the prior (std 1/sqrt(weight_decay)); a float
    # overrides the init std for vague priors whose draw would start the
    # chain too far from the data-fit region for the step budget.
    init_scale: float | None = None

    def validate(self) -> None:
        if self.n_cycles <= 0 or self.cycle_length <= 0:
            raise ConfigError("n_cycles and cycle_length must be positive")
        if not 0.0 < self.sampling_fraction < 1.0:
            raise ConfigError("sampling_fraction must lie in (0, 1)")
        if self.burn_in_cycles < 0 or self.burn_in_cycles >= self.n_cycles:
            raise ConfigError(
                "burn_in_cycles must satisfy 0 <= burn_in < n_cycles "
                f"(got {self.burn_in_cycles} / {self.n_cycles})"
            )
        n_sampling = self.cycle_length - _sampling_start(
            self.cycle_length, self.sampling_fraction
        )
        if not 1 <= self.samples_per_cycle <= n_sampling:
            raise ConfigError(
                f"samples_per_cycle must lie in [1, {n_sampling}] "
                f"(sampling phase of a {self.cycle_length}-step cycle)"
            )
        for name in ("initial_step_size", "temperature", "weight_decay", "clip_norm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.initial_step_size == 0 or self.weight_decay == 0:
            raise ConfigError("initial_step_size and weight_decay must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ConfigError("init_scale must be positive when set")

    @property
    def n_retained(self) -> int:
        return (self.n_cycles - self.burn_in_cycles) * self.samples_per_cycle


@dataclass(frozen=True)
class OptimizerConfig:
    """AdamW hyperparameters for the non-MCMC heads."""

    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 15
    patience: int = 3
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ConfigError("learning_rate, batch_size, max_epochs must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.weight_decay < 0 or self.clip_norm < 0:
            raise ConfigError("weight_decay and clip_norm must be non-negative")


@dataclass
class PosteriorSamples:
    """Weight samples plus the provenance needed to reproduce them."""

    members: list[HeadWeights]
    method: str
    label_mode: str
    seed: int
    dropout_rate: float | None = None
    n_passes: int | None = None

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"unknown label mode {self.label_mode!r}")
        if not self.members:
            raise ConfigError("posterior must contain at least one member")
        if self.method == METHOD_MC_DROPOUT:
            if self.dropout_rate is None or self.n_passes is None:
                raise ConfigError("mc_dropout posterior needs dropout_rate and n_passes")

    @property
    def n_inference_members(self) -> int:
        if self.method == METHOD_MC_DROPOUT:
            return int(self.n_passes)
        return len(self.members)


def step_size(t: int, cycle_length: int, initial_step_size: float) -> float:
    """Cosine schedule: alpha0/2 * (1 + cos(pi * mod(t, K) / K))."""
    m = t % cycle_length
    return 0.5 * initial_step_size * (1.0 + math.cos(math.pi * m / cycle_length))


def _sampling_start(cycle_length: int, sampling_fraction: float) -> int:
    # First in-cycle index with m/K >= 1 - fraction; the boundary itself
    # belongs to the sampling phase.
    return math.ceil((1.0 - sampling_fraction) * cycle_length - 1e-12)


def phase(t: int, cycle_length: int, sampling_fraction: float) -> str:
    m = t % cycle_length
    return "sampling" if m >= _sampling_start(cycle_length, sampling_fraction) else "exploration"


def snapshot_offsets(cycle_length: int, sampling_fraction: float, samples_per_cycle: int) -> list[int]:
    """In-cycle indices at which snapshots are taken.

    The sampling phase is partitioned uniformly: offsets
    floor((j+1) * L / (S+1)) from the phase start, L the phase length.
    Distinct whenever S <= L (enforced by SamplerConfig.validate).
    """
    start = _sampling_start(cycle_length, sampling_fraction)
    phase_len = cycle_length - start
    s = samples_per_cycle
    return [start + ((j + 1) * phase_len) // (s + 1) for j in range(s)]


GradFn = Callable[[np.ndarray, int], np.ndarray]


def sample_posterior(
    grad_fn: GradFn,
    theta0: np.ndarray,
    config: SamplerConfig,
    noise_rng: np.random.Generator,
) -> list[np.ndarray]:
    """Run the cyclical SG-MCMC chain on a flat parameter vector.

    ``grad_fn(theta, t)`` must return the full posterior-energy gradient
    (data term already scaled, prior term included). Returns exactly
    (n_cycles - burn_in) * samples_per_cycle float64 snapshots, each taken
    at the pre-update iterate of its collection step.
    """
    config.validate()
    theta = np.asarray(theta0, dtype=np.float64).copy()
    k = config.cycle_length
    start = _sampling_start(k, config.sampling_fraction)
    collect_at = set(snapshot_offsets(k, config.sampling_fraction, config.samples_per_cycle))

    snapshots: list[np.ndarray] = []
    # Overflow is detected explicitly via the finite check, so numpy's own
    # warnings are silenced for the update arithmetic.
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(config.n_cycles * k):
            m = t % k
            alpha = step_size(t, k, config.initial_step_size)
            sampling = m >= start
            if sampling and (t // k) >= config.burn_in_cycles and m in collect_at:
                snapshots.append(theta.copy())

            g = grad_fn(theta, t)
            if config.clip_norm > 0:
                gnorm = float(np.linalg.norm(g))
                if gnorm > config.clip_norm:
                    g = g * (config.clip_norm / gnorm)
            theta = theta - alpha * g
            if sampling and not config.disable_noise:
                noise = noise_rng.standard_normal(theta.shape)
                theta = theta + math.sqrt(2.0 * alpha * config.temperature) * noise
            if not np.all(np.isfinite(theta)):
                raise TrainingDivergedError(t, alpha)

    assert len(snapshots) == config.n_retained
    return snapshots


class _BatchStream:
    """Without-replacement mini-batches, reshuffled each pass over the data."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        batch = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return batch


def _pack(w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.concatenate([w.ravel(), b.ravel()]).astype(np.float64)


def _unpack(theta: np.ndarray, n_cat: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    return theta[: n_cat * dim].reshape(n_cat, dim), theta[n_cat * dim :]


def _targets(dataset: Dataset, label_mode: str, rows: np.ndarray) -> np.ndarray:
    if label_mode == "soft":
        return dataset.soft_labels[rows]
    onehot = np.zeros((len(rows), dataset.n_categories), dtype=np.float64)
    onehot[np.arange(len(rows)), dataset.hard_labels[rows]] = 1.0
    return onehot


def train_csgmcmc(
    dataset: Dataset,
    label_mode: str,
    config: SamplerConfig,
    seed: int,
    train_rows: np.ndarray | None = None,
) -> PosteriorSamples:
    """Cyclical SG-MCMC over the head.

    Trains on the train split by default; ``train_rows`` restricts training
    to an explicit row subset (the active-learning loop trains on the
    labeled pool). The posterior scale follows the effective training-set
    size unless pinned in the config.
    """
    config.validate()
    if label_mode not in LABEL_MODES:
        raise ConfigError(f"unknown label mode {label_mode!r}")
    if train_rows is None:
        train_rows = dataset.split_indices("train")
    else:
        train_rows = np.asarray(train_rows, dtype=np.intp)
    if len(train_rows) == 0:
        raise ConfigError("dataset has no train split")

    n_cat, dim = dataset.n_categories, dataset.dim
    n_data = config.posterior_scale if config.posterior_scale else len(train_rows)
    eta = config.weight_decay
    feats = dataset.features.astype(np.float64)

    init_rng = derive_rng(seed, METHOD_CSGMCMC, label_mode, "init")
    init_std = 1.0 / math.sqrt(eta) if config.init_scale is None else config.init_scale
    theta0 = init_rng.standard_normal(n_cat * dim + n_cat) * init_std

    batch_rng = derive_rng(seed, METHOD_CSGMCMC, label_mode, "batches")
    stream = _BatchStream(len(train_rows), config.batch_size, batch_rng)
    noise_rng = derive_rng(seed, METHOD_CSGMCMC, label_mode, "noise")

    def grad_fn(theta: np.ndarray, t: int) -> np.ndarray:
        rows = train_rows[stream.next()]
        w, b = _unpack(theta, n_cat, dim)
        x = feats[rows]
        z = x @ w.T + b
        loss = soft_cross_entropy(z, _targets(dataset, label_mode, rows), inputs=x)
        data_grad = _pack(loss.grad_w, loss.grad_b) * n_data
        return data_grad + eta * theta

    snapshots = sample_posterior(grad_fn, theta0, config, noise_rng)
    members = [
        HeadWeights(*(a.astype(np.float32) for a in _unpack(s, n_cat, dim)))
        for s in snapshots
    ]
    return PosteriorSamples(
        members=members, method=METHOD_CSGMCMC, label_mode=label_mode, seed=seed
    )


class AdamW:
    """Decoupled-weight-decay Adam on a flat parameter vector."""

    def __init__(self, config: OptimizerConfig, n_params: int):
        self.cfg = config
        self.m = np.zeros(n_params, dtype=np.float64)
        self.v = np.zeros(n_params, dtype=np.float64)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        self.t += 1
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad * grad
        m_hat = self.m / (1.0 - cfg.beta1**self.t)
        v_hat = self.v / (1.0 - cfg.beta2**self.t)
        update = m_hat / (np.sqrt(v_hat) + cfg.eps)
        return theta - cfg.learning_rate * (update + cfg.weight_decay * theta)


def _validation_nll(
    theta: np.ndarray, dataset: Dataset, val_rows: np.ndarray, n_cat: int, dim: int
) -> float:
    """Hard-label NLL of the single head, dropout disabled."""
    w, b = _unpack(theta, n_cat, dim)
    z = dataset.features[val_rows].astype(np.float64) @ w.T + b
    p = softmax(z)
    y = dataset.hard_labels[val_rows]
    picked = np.maximum(p[np.arange(len(val_rows)), y], PROB_FLOOR)
    return float(-np.mean(np.log(picked)))


def train_adamw(
    dataset: Dataset,
    label_mode: str,
    config: OptimizerConfig,
    seed: int,
    dropout_p: float | None = None,
    return_history: bool = False,
):
    """AdamW training with early stopping on validation NLL.

    Stops after ``patience`` epochs without improvement and returns the
    weights of the best-validation epoch. ``dropout_p`` enables inverted
    dropout on the head input during training (evaluation is always clean).
    With ``return_history`` the per-epoch train loss / validation NLL
    trajectory is returned alongside the weights.
    """
    config.validate()
    if label_mode not in LABEL_MODES:
        raise ConfigError(f"unknown label mode {label_mode!r}")
    if dropout_p is not None and not 0.0 <= dropout_p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {dropout_p}")

    train_rows = dataset.split_indices("train")
    val_rows = dataset.split_indices("validation")
    if len(train_rows) == 0 or len(val_rows) == 0:
        raise ConfigError("dataset needs non-empty train and validation splits")
    n_cat, dim = dataset.n_categories, dataset.dim
    feats = dataset.features.astype(np.float64)

    init_rng = derive_rng(seed, "adamw", label_mode, "init")
    theta = 0.02 * init_rng.standard_normal(n_cat * dim + n_cat)
    shuffle_rng = derive_rng(seed, "adamw", label_mode, "shuffle")
    dropout_rng = derive_rng(seed, "adamw", label_mode, "dropout")

    opt = AdamW(config, theta.size)
    best_theta = theta.copy()
    best_nll = _validation_nll(theta, dataset, val_rows, n_cat, dim)
    epochs_since_best = 0
    history = {"train_loss": [], "val_nll": [], "best_epoch": -1}

    def full_train_loss(th: np.ndarray) -> float:
        w, b = _unpack(th, n_cat, dim)
        z = feats[train_rows] @ w.T + b
        return soft_cross_entropy(z, _targets(dataset, label_mode, train_rows)).value

    n = len(train_rows)
    batch = min(config.batch_size, n)
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n - batch + 1, batch):
            rows = train_rows[order[lo : lo + batch]]
            w, b = _unpack(theta, n_cat, dim)
            x = feats[rows]
            if dropout_p:
                mask = dropout_rng.random(x.shape) >= dropout_p
                x = x * mask / (1.0 - dropout_p)
            z = x @ w.T + b
            loss = soft_cross_entropy(z, _targets(dataset, label_mode, rows), inputs=x)
            grad = _pack(loss.grad_w, loss.grad_b)
            if config.clip_norm > 0:
                gnorm = float(np.linalg.norm(grad))
                if gnorm > config.clip_norm:
                    grad = grad * (config.clip_norm / gnorm)
            theta = opt.step(theta, grad)
            if not np.all(np.isfinite(theta)):
                raise TrainingDivergedError(opt.t, config.learning_rate)

        nll = _validation_nll(theta, dataset, val_rows, n_cat, dim)
        if return_history:
            history["train_loss"].append(full_train_loss(theta))
            history["val_nll"].append(nll)
        if nll < best_nll:
            best_nll = nll
            best_theta = theta.copy()
            epochs_since_best = 0
            history["best_epoch"] = epoch
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    w, b = _unpack(best_theta, n_cat, dim)
    head = HeadWeights(w.astype(np.float32), b.astype(np.float32))
    if return_history:
        return head, history
    return head


def train_deterministic(
    dataset: Dataset, label_mode: str, config: OptimizerConfig, seed: int
) -> PosteriorSamples:
    head = train_adamw(dataset, label_mode, config, seed)
    return PosteriorSamples(
        members=[head], method=METHOD_DETERMINISTIC, label_mode=label_mode, seed=seed
    )


def train_mc_dropout(
    dataset: Dataset,
    label_mode: str,
    config: OptimizerConfig,
    seed: int,
    dropout_rate: float = 0.1,
    n_passes: int = 20,
) -> PosteriorSamples:
    head = train_adamw(dataset, label_mode, config, seed, dropout_p=dropout_rate)
    return PosteriorSamples(
        members=[head],
        method=METHOD_MC_DROPOUT,
        label_mode=label_mode,
        seed=seed,
        dropout_rate=dropout_rate,
        n_passes=n_passes,
    )


def train_ensemble(
    dataset: Dataset,
    label_mode: str,
    config: OptimizerConfig,
    seed: int,
    n_members: int = 5,
) -> PosteriorSamples:
    """Independently initialised heads on member-specific shuffle streams."""
    if n_members < 2:
        raise ConfigError("an ensemble needs at least 2 members")
    members = []
    for k in range(n_members):
        member_seed = derive_seed(seed, "ensemble-member", k)
        members.append(train_adamw(dataset, label_mode, config, member_seed))
    return PosteriorSamples(
        members=members, method=METHOD_ENSEMBLE, label_mode=label_mode, seed=seed
    )


def save_posterior(
    samples: PosteriorSamples, out_dir: str | Path, config_hash: str | None = None
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "method": samples.method,
        "label_mode": samples.label_mode,
        "seed": samples.seed,
        "member_count": len(samples.members),
        "dropout_rate": samples.dropout_rate,
        "n_passes": samples.n_passes,
        "config_hash": config_hash,
        "files": [f"member_{i:03d}.phw" for i in range(len(samples.members))],
    }
    for name, member in zip(manifest["files"], samples.members):
        save_weights(member, out / name)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_posterior(in_dir: str | Path) -> PosteriorSamples:
    in_dir = Path(in_dir)
    with open(in_dir / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    members = [load_weights(in_dir / name) for name in manifest["files"]]
    return PosteriorSamples(
        members=members,
        method=manifest["method"],
        label_mode=manifest["label_mode"],
        seed=int(manifest["seed"]),
        dropout_rate=manifest.get("dropout_rate"),
        n_passes=manifest.get("n_passes"),
    )
