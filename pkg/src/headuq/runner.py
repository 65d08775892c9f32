"""Experiment orchestration: grid, ablation, active learning, diagnostics.

A single config drives everything. Per-run RNG streams are derived from
(seed, method, label, purpose), so adding or removing runs never perturbs
the others, and a rerun with the same config writes byte-identical report
JSON (wall-clock timings live in their own file). Independent runs may be
executed by a worker pool; results are aggregated after a deterministic
sort, so parallel output equals serial output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import apply_temperature, fit_temperature, rank_stability
from .dataio import Dataset, load_dataset, subset_view
from .errors import ConfigError, HeadUQError
from .metrics import (
    MetricReport,
    annotator_divergences,
    brier_multiclass,
    compute_report,
    ece,
    jsd_bits,
    nll_hard,
    risk_coverage_curve,
)
from .rngstream import derive_rng, derive_seed
from .stats import (
    RunRow,
    anova_two_way_balanced,
    bootstrap_ci,
    cohens_d_paired,
    cohens_d_pooled,
    one_way_anova,
    paired_t,
    paired_t_holm,
    strict_dominance,
)
from .active import ALConfig, run_al_loop
from .trainers import (
    ALL_METHODS,
    LABEL_MODES,
    METHOD_CSGMCMC,
    METHOD_DETERMINISTIC,
    METHOD_ENSEMBLE,
    METHOD_MC_DROPOUT,
    OptimizerConfig,
    PosteriorSamples,
    SamplerConfig,
    load_posterior,
    save_posterior,
    train_csgmcmc,
    train_deterministic,
    train_ensemble,
    train_mc_dropout,
)
from .uncertainty import predict_dataset

CANONICAL_SEEDS = (42, 43, 44)

# Grid metrics fed to the statistics pass: (report field, split, direction
# of improvement for the proposed-method comparisons).
GRID_STAT_METRICS = (
    ("jsd_bits", "validation", "lower"),
    ("kl_nats", "validation", "lower"),
    ("tv", "validation", "lower"),
    ("spearman_rho", "validation", "higher"),
    ("ece", "test", "lower"),
    ("brier", "test", "lower"),
    ("nll", "test", "lower"),
    ("aurc_total", "test", "lower"),
    ("auroc_total", "test", "higher"),
    ("accuracy", "test", "higher"),
    ("macro_f1", "test", "higher"),
)


@dataclass(frozen=True)
class AblationGrid:
    n_cycles: tuple[int, ...] = (4, 8, 12)
    temperature: tuple[float, ...] = (0.5, 1.0, 1.5)
    samples_per_cycle: tuple[int, ...] = (3, 10, 20)
    samples_extended: tuple[int, ...] = (30,)
    include_extended: bool = True
    label_mode: str = "soft"


@dataclass(frozen=True)
class ExperimentConfig:
    feature_path: str
    examples_path: str
    categories_path: str | None = None
    expect_canonical: bool = False

    methods: tuple[str, ...] = ALL_METHODS
    label_modes: tuple[str, ...] = LABEL_MODES
    seeds: tuple[int, ...] = CANONICAL_SEEDS

    sampler: SamplerConfig = SamplerConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    dropout_rate: float = 0.1
    dropout_passes: int = 20
    ensemble_size: int = 5

    ablation: AblationGrid = AblationGrid()
    al_strategies: tuple[str, ...] = ("bald", "entropy", "random")
    al_iterations: int = 20
    al_batch_per_iter: int = 500
    al_initial_seed_size: int = 500
    al_sampler: SamplerConfig = SamplerConfig(
        n_cycles=4, cycle_length=500, burn_in_cycles=1, samples_per_cycle=5
    )
    al_label_mode: str = "soft"
    al_exclude_categories: tuple[int, ...] = ()

    n_bins: int = 15
    out_dir: str = "headuq-out"
    jobs: int = 1

    def validate(self) -> None:
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for l in self.label_modes:
            if l not in LABEL_MODES:
                raise ConfigError(f"unknown label mode {l!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.methods or not self.label_modes:
            raise ConfigError("methods and label_modes must be non-empty")
        self.sampler.validate()
        self.optimizer.validate()
        self.al_sampler.validate()
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def config_hash(self) -> str:
        payload = asdict(self)
        # Execution knobs that cannot affect results are excluded.
        payload.pop("out_dir")
        payload.pop("jobs")
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        nested = {
            "sampler": SamplerConfig,
            "optimizer": OptimizerConfig,
            "al_sampler": SamplerConfig,
            "ablation": AblationGrid,
        }
        kwargs = {}
        for key, sub_cls in nested.items():
            if key in raw:
                sub_raw = raw.pop(key)
                if not isinstance(sub_raw, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                unknown = set(sub_raw) - {f for f in sub_cls.__dataclass_fields__}
                if unknown:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
                sub_raw = {
                    k: tuple(v) if isinstance(v, list) else v for k, v in sub_raw.items()
                }
                kwargs[key] = sub_cls(**sub_raw)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        cfg = cls(**raw, **kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


_DATASET_CACHE: dict[tuple, Dataset] = {}


def get_dataset(config: ExperimentConfig) -> Dataset:
    key = (
        config.feature_path,
        config.examples_path,
        config.categories_path,
        config.expect_canonical,
    )
    if key not in _DATASET_CACHE:
        _DATASET_CACHE[key] = load_dataset(
            config.feature_path,
            config.examples_path,
            config.categories_path,
            expect_canonical=config.expect_canonical,
        )
    return _DATASET_CACHE[key]


def _json_dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def run_name(method: str, label_mode: str, seed: int) -> str:
    return f"{method}_{label_mode}_{seed}"


def train_posterior(
    dataset: Dataset,
    config: ExperimentConfig,
    method: str,
    label_mode: str,
    seed: int,
    sampler_override: SamplerConfig | None = None,
) -> PosteriorSamples:
    if method == METHOD_DETERMINISTIC:
        return train_deterministic(dataset, label_mode, config.optimizer, seed)
    if method == METHOD_MC_DROPOUT:
        return train_mc_dropout(
            dataset,
            label_mode,
            config.optimizer,
            seed,
            dropout_rate=config.dropout_rate,
            n_passes=config.dropout_passes,
        )
    if method == METHOD_ENSEMBLE:
        return train_ensemble(
            dataset, label_mode, config.optimizer, seed, n_members=config.ensemble_size
        )
    if method == METHOD_CSGMCMC:
        return train_csgmcmc(
            dataset, label_mode, sampler_override or config.sampler, seed
        )
    raise ConfigError(f"unknown method {method!r}")


def predict_split(
    samples: PosteriorSamples,
    dataset: Dataset,
    split: str,
    keep_members: bool = False,
    temperature: float = 1.0,
):
    """Split predictions under the run's derived stream (mc_dropout masks)."""
    rng = derive_rng(samples.seed, samples.method, samples.label_mode, "predict", split)
    return predict_dataset(
        samples,
        dataset,
        split,
        rng=rng,
        keep_members=keep_members,
        temperature=temperature,
    )


def _write_curve_csvs(run_dir: Path, split: str, predictions, dataset: Dataset) -> None:
    rows = dataset.split_indices(split)
    correct = predictions.argmax() == dataset.hard_labels[rows]
    coverage, risks = risk_coverage_curve(predictions.h_tot, correct)
    with open(run_dir / f"riskcov_{split}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["coverage", "risk"])
        for c, r in zip(coverage, risks):
            writer.writerow([repr(float(c)), repr(float(r))])


def execute_run(
    config: ExperimentConfig, method: str, label_mode: str, seed: int
) -> dict:
    """Train, evaluate, calibrate and persist one grid run."""
    dataset = get_dataset(config)
    run_dir = Path(config.out_dir) / "runs" / run_name(method, label_mode, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    samples = train_posterior(dataset, config, method, label_mode, seed)
    save_posterior(samples, run_dir / "posterior", config_hash=config.config_hash())

    val_pred = predict_split(samples, dataset, "validation", keep_members=True)
    test_pred = predict_split(samples, dataset, "test")

    reports = {}
    for split, pred in (("validation", val_pred), ("test", test_pred)):
        report = compute_report(
            pred, dataset, split, method, label_mode, seed, n_bins=config.n_bins
        )
        reports[split] = report
        _json_dump(report.to_dict(), run_dir / f"report_{split}.json")
        _write_curve_csvs(run_dir, split, pred, dataset)

    calibration = calibrate_run(
        config, dataset, samples, val_pred, test_pred, reports["test"]
    )
    _json_dump(calibration, run_dir / "temperature.json")

    elapsed = time.perf_counter() - started
    return {
        "run": run_name(method, label_mode, seed),
        "method": method,
        "label_mode": label_mode,
        "seed": seed,
        "reports": {s: r.to_dict() for s, r in reports.items()},
        "calibration": calibration,
        "seconds": elapsed,
    }


def calibrate_run(
    config: ExperimentConfig,
    dataset: Dataset,
    samples: PosteriorSamples,
    val_pred,
    test_pred,
    test_report: MetricReport,
) -> dict:
    """Temperature fit on validation members, re-evaluation on test."""
    member_logits = np.log(np.maximum(val_pred.member_dists, 1e-300))
    val_rows = dataset.split_indices("validation")
    fit = fit_temperature(
        member_logits,
        dataset.hard_labels[val_rows],
        method=samples.method,
        label_mode=samples.label_mode,
        seed=samples.seed,
    )

    test_rows = dataset.split_indices("test")
    scaled = apply_temperature(
        samples,
        fit.t_opt,
        test_rows,
        dataset.features,
        rng=derive_rng(samples.seed, samples.method, samples.label_mode, "predict", "test"),
        ids=[dataset.ids[r] for r in test_rows],
    )
    y = dataset.hard_labels[test_rows]
    q = dataset.soft_labels[test_rows]
    rho_conf, rho_entropy = rank_stability(test_pred, scaled)
    return {
        "fit": fit.to_dict(),
        "test_before": {
            "ece": test_report.ece,
            "brier": test_report.brier,
            "nll": test_report.nll,
            "jsd_bits": test_report.jsd_bits,
        },
        "test_after": {
            "ece": ece(scaled, y, config.n_bins),
            "brier": brier_multiclass(scaled, y),
            "nll": nll_hard(scaled, y),
            "jsd_bits": annotator_divergences(scaled, q)["jsd_bits"],
        },
        "rank_stability": {"top1_confidence": rho_conf, "entropy": rho_entropy},
    }


def _run_worker(args: tuple) -> dict:
    config_dict, method, label_mode, seed = args
    config = ExperimentConfig(**config_dict)
    try:
        return execute_run(config, method, label_mode, seed)
    except HeadUQError as exc:
        return {
            "run": run_name(method, label_mode, seed),
            "method": method,
            "label_mode": label_mode,
            "seed": seed,
            "error": f"{type(exc).__name__}: {exc}",
        }


def _config_as_kwargs(config: ExperimentConfig) -> dict:
    d = {f: getattr(config, f) for f in config.__dataclass_fields__}
    return d


def run_grid(config: ExperimentConfig, only: dict | None = None) -> dict:
    """Execute the full (method x label x seed) grid plus stats and scaling."""
    config.validate()
    get_dataset(config)  # fail early, share via fork
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tasks = [
        (method, label_mode, seed)
        for method in config.methods
        for label_mode in config.label_modes
        for seed in config.seeds
    ]
    if only:
        tasks = [
            t
            for t in tasks
            if (not only.get("method") or t[0] in only["method"])
            and (not only.get("label") or t[1] in only["label"])
            and (not only.get("seed") or t[2] in only["seed"])
        ]
    if not tasks:
        raise ConfigError("--only filter matched no runs")

    worker_args = [(_config_as_kwargs(config), m, l, s) for m, l, s in tasks]
    if config.jobs > 1:
        # spawn keeps workers safe when the grid is launched from a service
        # request thread; each worker loads the dataset from the paths once
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.jobs, mp_context=ctx) as pool:
            results = list(pool.map(_run_worker, worker_args))
    else:
        results = [_run_worker(a) for a in worker_args]
    results.sort(key=lambda r: (r["method"], r["label_mode"], r["seed"]))

    failures = [r for r in results if "error" in r]
    complete = [r for r in results if "error" not in r]

    stats = compute_grid_stats(complete) if complete else {}
    _json_dump(stats, out / "stats.json")
    (out / "stats_summary.txt").write_text(render_stats_summary(stats), encoding="utf-8")
    _json_dump(
        [
            {
                "run": r["run"],
                "method": r["method"],
                "label_mode": r["label_mode"],
                "seed": r["seed"],
                **r["calibration"]["fit"],
                "test_before": r["calibration"]["test_before"],
                "test_after": r["calibration"]["test_after"],
                "rank_stability": r["calibration"]["rank_stability"],
            }
            for r in complete
        ],
        out / "calibration.json",
    )
    write_grid_csv(complete, out / "grid.csv")

    bundle = {
        "config_hash": config.config_hash(),
        "versions": {"headuq": __version__, "numpy": np.__version__},
        "status": "partial" if failures else "complete",
        "runs": [r["run"] for r in results],
        "failures": [{"run": r["run"], "error": r["error"]} for r in failures],
        "n_runs": len(results),
    }
    _json_dump(bundle, out / "bundle.json")
    _json_dump(
        {r["run"]: r.get("seconds") for r in complete},
        out / "timing.json",
    )
    return {**bundle, "results": results, "stats": stats}


def _metric_value(run: dict, metric: str, split: str):
    return run["reports"][split][metric]


def compute_grid_stats(results: list[dict]) -> dict:
    """ANOVA, proposed-vs-baseline tests and dominance verdicts per metric."""
    methods = sorted({r["method"] for r in results})
    labels = sorted({r["label_mode"] for r in results})
    seeds = sorted({r["seed"] for r in results})
    out: dict = {"metrics": {}}
    for metric, split, direction in GRID_STAT_METRICS:
        entry: dict = {"split": split, "direction": direction}
        values = {}
        missing = False
        for r in results:
            v = _metric_value(r, metric, split)
            if v is None:
                missing = True
            values[(r["method"], r["label_mode"], r["seed"])] = v
        if missing or len(results) != len(methods) * len(labels) * len(seeds):
            entry["skipped"] = "missing values or incomplete grid"
            out["metrics"][metric] = entry
            continue

        if len(methods) >= 2 and len(labels) >= 2 and len(seeds) >= 2:
            rows = [
                RunRow(method=m, label_mode=l, seed=s, value=values[(m, l, s)])
                for m in methods
                for l in labels
                for s in seeds
            ]
            anova = anova_two_way_balanced(rows)
            entry["anova"] = {
                name: {
                    "ss": fr.ss,
                    "df": fr.df,
                    "f": fr.f,
                    "p": fr.p,
                    "partial_eta_sq": fr.partial_eta_sq,
                }
                for name, fr in anova.items()
                if name in ("method", "label", "interaction", "residual")
            }

        if METHOD_CSGMCMC in methods and len(methods) >= 2 and len(seeds) >= 2:
            entry["comparisons"] = {}
            for label in labels:
                proposed = np.array([values[(METHOD_CSGMCMC, label, s)] for s in seeds])
                baselines = {
                    m: np.array([values[(m, label, s)] for s in seeds])
                    for m in methods
                    if m != METHOD_CSGMCMC
                }
                tests = paired_t_holm(
                    proposed, baselines, seed=derive_seed("grid-stats", metric, label)
                )
                dominance = strict_dominance(
                    proposed,
                    baselines,
                    direction=direction,
                    seed=derive_seed("grid-dominance", metric, label),
                )
                entry["comparisons"][label] = {
                    "per_baseline": {
                        name: {
                            "t": t.statistic,
                            "p_raw": t.p_raw,
                            "p_holm": t.p_holm,
                            "mean_diff": t.mean_diff,
                            "cohens_d_paired": t.effect_size,
                            "ci_mean_diff": t.ci,
                            "degenerate": t.degenerate,
                        }
                        for name, t in tests.items()
                    },
                    "strict_dominance": dominance.holds,
                    "dominance_evidence": dominance.per_baseline,
                }
        out["metrics"][metric] = entry
    return out


def render_stats_summary(stats: dict) -> str:
    """Human-readable fixed-width digest of the grid statistics."""
    lines: list[str] = []
    for metric, entry in stats.get("metrics", {}).items():
        direction = entry.get("direction")
        lines.append(f"== {metric} ({entry.get('split')}, {direction} is better) ==")
        if "skipped" in entry:
            lines.append(f"  skipped: {entry['skipped']}")
            lines.append("")
            continue
        anova = entry.get("anova")
        if anova:
            parts = []
            for factor in ("method", "label", "interaction"):
                fr = anova[factor]
                if fr["f"] is None:
                    parts.append(f"{factor}: F undefined")
                else:
                    parts.append(
                        f"{factor}: F={fr['f']:.3f} p={fr['p']:.3g} "
                        f"eta2={fr['partial_eta_sq']:.3f}"
                    )
            lines.append("  ANOVA  " + "; ".join(parts))
        for label, comp in sorted(entry.get("comparisons", {}).items()):
            for name, t in sorted(comp["per_baseline"].items()):
                if t["degenerate"]:
                    lines.append(f"  [{label}] vs {name}: degenerate (zero-variance)")
                    continue
                star = " *" if (t["p_holm"] is not None and t["p_holm"] < 0.05) else ""
                lines.append(
                    f"  [{label}] vs {name}: diff={t['mean_diff']:+.4f} "
                    f"holm p={t['p_holm']:.4g}{star} d={t['cohens_d_paired']:.2f} "
                    f"ci=[{t['ci_mean_diff'][0]:.4f}, {t['ci_mean_diff'][1]:.4f}]"
                )
            verdict = "YES" if comp["strict_dominance"] else "no"
            lines.append(f"  [{label}] strict dominance: {verdict}")
        lines.append("")
    return "\n".join(lines) + "\n"


GRID_CSV_FIELDS = (
    "ece", "brier", "nll", "jsd_bits", "kl_nats", "tv",
    "spearman_rho", "spearman_k",
    "aurc_total", "auroc_total", "aurc_epistemic", "auroc_epistemic",
    "aurc_aleatoric", "auroc_aleatoric",
    "accuracy", "macro_f1", "failure_entropy_ratio",
    "mean_total_entropy", "mean_aleatoric_entropy", "mean_epistemic_entropy",
)


def write_grid_csv(results: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "label_mode", "seed", "split", *GRID_CSV_FIELDS])
        for r in results:
            for split in sorted(r["reports"]):
                rep = r["reports"][split]
                writer.writerow(
                    [r["method"], r["label_mode"], r["seed"], split]
                    + [rep[f] for f in GRID_CSV_FIELDS]
                )


def run_ablation(config: ExperimentConfig) -> dict:
    """Vary cycles / temperature / samples-per-cycle around the canonical
    sampler; sensitivity metric is the mean total entropy on validation."""
    config.validate()
    dataset = get_dataset(config)
    out = Path(config.out_dir) / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    grid = config.ablation
    base = config.sampler

    axes: dict[str, list] = {
        "n_cycles": list(grid.n_cycles),
        "temperature": list(grid.temperature),
        "samples_per_cycle": list(grid.samples_per_cycle),
    }

    cache: dict[tuple, dict] = {}

    def entropy_for(sampler: SamplerConfig, seed: int) -> dict:
        key = (sampler, seed)
        if key not in cache:
            samples = train_csgmcmc(dataset, grid.label_mode, sampler, seed)
            pred = predict_split(samples, dataset, "validation")
            cache[key] = {
                "mean_total_entropy": float(np.mean(pred.h_tot)),
                "mean_aleatoric_entropy": float(np.mean(pred.h_ale)),
                "mean_epistemic_entropy": float(np.mean(pred.h_epi)),
            }
        return cache[key]

    report: dict = {"label_mode": grid.label_mode, "axes": {}}
    for axis, levels in axes.items():
        level_stats = []
        groups = []
        for level in levels:
            sampler = replace(base, **{axis: level})
            # keep burn-in below the cycle count when the axis shrinks it
            if sampler.burn_in_cycles >= sampler.n_cycles:
                sampler = replace(sampler, burn_in_cycles=max(0, sampler.n_cycles - 1))
            per_seed = [entropy_for(sampler, seed) for seed in config.seeds]
            vals = [p["mean_total_entropy"] for p in per_seed]
            groups.append(vals)
            level_stats.append(
                {
                    "level": level,
                    "per_seed": vals,
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else None,
                }
            )
        axis_entry: dict = {"levels": level_stats}
        if len(levels) >= 2 and all(len(g) >= 2 for g in groups):
            axis_entry["anova"] = one_way_anova(groups)
            pairs = {}
            for i in range(len(levels)):
                for j in range(i + 1, len(levels)):
                    a, b = np.array(groups[j]), np.array(groups[i])
                    diffs = a - b
                    pairs[f"{levels[j]}_vs_{levels[i]}"] = {
                        "mean_diff": float(np.mean(diffs)),
                        "cohens_d_paired": cohens_d_paired(a, b),
                        "cohens_d_pooled": cohens_d_pooled(a, b),
                        "ci_mean_diff": bootstrap_ci(
                            diffs, seed=derive_seed("ablation", axis, i, j)
                        ),
                    }
            axis_entry["pairwise"] = pairs
        else:
            axis_entry["anova"] = None
        report["axes"][axis] = axis_entry

    if grid.include_extended and grid.samples_extended:
        levels = list(grid.samples_per_cycle) + list(grid.samples_extended)
        groups = []
        for level in levels:
            sampler = replace(base, samples_per_cycle=level)
            groups.append(
                [entropy_for(sampler, seed)["mean_total_entropy"] for seed in config.seeds]
            )
        report["samples_extended"] = {
            "levels": levels,
            "per_level": groups,
            "anova": one_way_anova(groups) if all(len(g) >= 2 for g in groups) else None,
        }

    _json_dump(report, out / "ablation.json")
    return report


def run_active_learning(config: ExperimentConfig) -> dict:
    config.validate()
    dataset = get_dataset(config)
    out = Path(config.out_dir) / "al"
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for strategy in config.al_strategies:
        for seed in config.seeds:
            al_cfg = ALConfig(
                strategy=strategy,
                seed=seed,
                n_iterations=config.al_iterations,
                batch_per_iter=config.al_batch_per_iter,
                initial_seed_size=config.al_initial_seed_size,
                label_mode=config.al_label_mode,
                sampler=config.al_sampler,
                exclude_categories=config.al_exclude_categories,
            )
            curve = run_al_loop(dataset, al_cfg)
            stem = f"{strategy}_{seed}"
            curve.to_csv(out / f"curve_{stem}.csv")
            curve.write_histograms(out / f"histogram_{stem}.json")
            index.append(
                {
                    "strategy": strategy,
                    "seed": seed,
                    "final_accuracy": curve.rows[-1]["accuracy"],
                    "final_macro_f1": curve.rows[-1]["macro_f1"],
                    "n_labeled_final": curve.rows[-1]["n_labeled"],
                }
            )
    _json_dump(index, out / "al.json")
    return {"runs": index}


def run_subset_diagnostic(config: ExperimentConfig) -> dict:
    """Annotator-divergence metrics on the high-disagreement validation
    subset, from the persisted grid posteriors."""
    config.validate()
    dataset = get_dataset(config)
    out = Path(config.out_dir)
    runs_dir = out / "runs"
    subset = subset_view(dataset, split="validation", high_disagreement=True)
    if len(subset) == 0:
        result = {"skipped": "high-disagreement subset is empty"}
        _json_dump(result, out / "subset_diagnostic.json")
        return result

    val_rows = dataset.split_indices("validation")
    pos_of_row = {int(r): i for i, r in enumerate(val_rows)}
    subset_pos = np.array([pos_of_row[int(r)] for r in subset])

    per_run = []
    for run_dir in sorted(runs_dir.iterdir()) if runs_dir.exists() else []:
        posterior_dir = run_dir / "posterior"
        if not posterior_dir.exists():
            continue
        samples = load_posterior(posterior_dir)
        # Full-split prediction with the run's own stream, then sliced, so a
        # subset equal to the split reproduces the main numbers exactly.
        pred = predict_split(samples, dataset, "validation")
        q = dataset.soft_labels[val_rows]
        jsd = np.atleast_1d(jsd_bits(q, pred.mean_dist))
        div = annotator_divergences(pred, q)
        per_run.append(
            {
                "run": run_dir.name,
                "method": samples.method,
                "label_mode": samples.label_mode,
                "seed": samples.seed,
                "subset_jsd_bits": float(jsd[subset_pos].mean()),
                "subset_kl_nats": float(div["per_example_kl"][subset_pos].mean()),
                "split_jsd_bits": float(jsd.mean()),
            }
        )

    comparisons = {}
    for label in sorted({r["label_mode"] for r in per_run}):
        rows_l = [r for r in per_run if r["label_mode"] == label]
        prop = sorted(
            (r for r in rows_l if r["method"] == METHOD_CSGMCMC), key=lambda r: r["seed"]
        )
        ens = sorted(
            (r for r in rows_l if r["method"] == METHOD_ENSEMBLE), key=lambda r: r["seed"]
        )
        if len(prop) >= 2 and len(prop) == len(ens):
            a = np.array([r["subset_jsd_bits"] for r in prop])
            b = np.array([r["subset_jsd_bits"] for r in ens])
            tr = paired_t(a, b)
            comparisons[label] = {
                "delta_jsd": float(np.mean(a - b)),
                "t": None if tr is None else tr[0],
                "p": None if tr is None else tr[1],
            }

    result = {
        "subset_size": int(len(subset)),
        "validation_size": int(len(val_rows)),
        "per_run": per_run,
        "csgmcmc_vs_deep_ensemble": comparisons,
    }
    _json_dump(result, out / "subset_diagnostic.json")
    return result


def run_calibration_pass(config: ExperimentConfig) -> dict:
    """Recompute temperature fits for every persisted run directory."""
    config.validate()
    dataset = get_dataset(config)
    runs_dir = Path(config.out_dir) / "runs"
    if not runs_dir.exists():
        raise ConfigError(f"no runs directory under {config.out_dir}")
    rows = []
    for run_dir in sorted(runs_dir.iterdir()):
        posterior_dir = run_dir / "posterior"
        if not posterior_dir.exists():
            continue
        samples = load_posterior(posterior_dir)
        val_pred = predict_split(samples, dataset, "validation", keep_members=True)
        test_pred = predict_split(samples, dataset, "test")
        report = compute_report(
            test_pred, dataset, "test", samples.method, samples.label_mode,
            samples.seed, n_bins=config.n_bins,
        )
        calibration = calibrate_run(config, dataset, samples, val_pred, test_pred, report)
        _json_dump(calibration, run_dir / "temperature.json")
        rows.append({"run": run_dir.name, **calibration["fit"]})
    _json_dump(rows, Path(config.out_dir) / "calibration.json")
    return {"fits": rows}


def run_stats_pass(config: ExperimentConfig) -> dict:
    """Recompute grid statistics from persisted report JSON."""
    runs_dir = Path(config.out_dir) / "runs"
    if not runs_dir.exists():
        raise ConfigError(f"no runs directory under {config.out_dir}")
    results = []
    for run_dir in sorted(runs_dir.iterdir()):
        reports = {}
        for split in ("validation", "test"):
            path = run_dir / f"report_{split}.json"
            if path.exists():
                with open(path, "r", encoding="utf-8") as fh:
                    reports[split] = json.load(fh)
        if not reports:
            continue
        any_report = next(iter(reports.values()))
        results.append(
            {
                "run": run_dir.name,
                "method": any_report["method"],
                "label_mode": any_report["label_mode"],
                "seed": any_report["seed"],
                "reports": reports,
            }
        )
    stats = compute_grid_stats(results) if results else {}
    _json_dump(stats, Path(config.out_dir) / "stats.json")
    (Path(config.out_dir) / "stats_summary.txt").write_text(
        render_stats_summary(stats), encoding="utf-8"
    )
    return stats


def write_report_csvs(config: ExperimentConfig) -> dict:
    """Flatten persisted reports into CSV files under <out>/report."""
    runs_dir = Path(config.out_dir) / "runs"
    if not runs_dir.exists():
        raise ConfigError(f"no runs directory under {config.out_dir}")
    report_dir = Path(config.out_dir) / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    results = []
    for run_dir in sorted(runs_dir.iterdir()):
        reports = {}
        for split in ("validation", "test"):
            path = run_dir / f"report_{split}.json"
            if path.exists():
                with open(path, "r", encoding="utf-8") as fh:
                    reports[split] = json.load(fh)
        if not reports:
            continue
        any_report = next(iter(reports.values()))
        results.append(
            {
                "method": any_report["method"],
                "label_mode": any_report["label_mode"],
                "seed": any_report["seed"],
                "reports": reports,
            }
        )
    write_grid_csv(results, report_dir / "grid.csv")

    reliability_path = report_dir / "reliability.csv"
    with open(reliability_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "label_mode", "seed", "split", "bin", "lo", "hi",
             "count", "mean_confidence", "accuracy"]
        )
        for r in results:
            for split, rep in sorted(r["reports"].items()):
                for row in rep["reliability"]:
                    writer.writerow(
                        [r["method"], r["label_mode"], r["seed"], split,
                         row["bin"], row["lo"], row["hi"], row["count"],
                         row["mean_confidence"], row["accuracy"]]
                    )

    calibration_path = report_dir / "calibration.csv"
    with open(calibration_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "label_mode", "seed", "t_opt", "val_nll_before",
             "val_nll_after", "ece_before", "ece_after", "brier_before",
             "brier_after", "nll_before", "nll_after", "jsd_before",
             "jsd_after", "rank_rho_confidence", "rank_rho_entropy"]
        )
        for run_dir in sorted(runs_dir.iterdir()):
            path = run_dir / "temperature.json"
            if not path.exists():
                continue
            with open(path, "r", encoding="utf-8") as cal_fh:
                cal = json.load(cal_fh)
            fit = cal["fit"]
            before, after = cal["test_before"], cal["test_after"]
            writer.writerow(
                [fit["method"], fit["label_mode"], fit["seed"], fit["t_opt"],
                 fit["val_nll_before"], fit["val_nll_after"],
                 before["ece"], after["ece"], before["brier"], after["brier"],
                 before["nll"], after["nll"], before["jsd_bits"],
                 after["jsd_bits"], cal["rank_stability"]["top1_confidence"],
                 cal["rank_stability"]["entropy"]]
            )
    return {
        "grid_csv": str(report_dir / "grid.csv"),
        "reliability_csv": str(reliability_path),
        "calibration_csv": str(calibration_path),
        "n_runs": len(results),
    }
