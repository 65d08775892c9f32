"""FastAPI service wrapping the experiment engine.

Long-lived process: datasets are cached across requests, so a grid run, its
calibration pass and its diagnostics all reuse one loaded corpus. Every
endpoint is deterministic given its request body; config/data problems map
to HTTP 400 with the underlying message.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..dataio import load_dataset, subset_view
from ..errors import HeadUQError
from ..runner import (
    ExperimentConfig,
    run_active_learning,
    run_ablation,
    run_calibration_pass,
    run_grid,
    run_stats_pass,
    run_subset_diagnostic,
    write_report_csvs,
)
from ..synthetic import SyntheticConfig, write_synthetic_corpus
from .schemas import (
    ExperimentRequest,
    GridResponse,
    HealthResponse,
    JsonResponse,
    SyntheticRequest,
    SyntheticResponse,
    ValidateRequest,
    ValidateResponse,
)

app = FastAPI(
    title="headuq",
    description="Bayesian linear heads over frozen embeddings: training, "
    "uncertainty evaluation, and the statistical comparison protocol.",
    version=__version__,
)


def _config_from(req: ExperimentRequest) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(req.config)
    except HeadUQError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except HeadUQError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(version=__version__)


@app.post("/data/synthetic", response_model=SyntheticResponse)
def make_synthetic(req: SyntheticRequest) -> SyntheticResponse:
    cfg = SyntheticConfig(
        n_examples=req.n_examples,
        n_categories=req.n_categories,
        dim=req.dim,
        n_annotators=req.n_annotators,
        seed=req.seed,
        ambiguity=tuple(req.ambiguity) if req.ambiguity else SyntheticConfig.ambiguity,
        class_separation=req.class_separation,
        feature_noise=req.feature_noise,
    )
    paths = _guard(write_synthetic_corpus, cfg, req.out_dir)
    dataset = _guard(load_dataset, paths["features"], paths["examples"], paths["categories"])
    return SyntheticResponse(
        **paths, n_examples=dataset.n_examples, split_sizes=dataset.split_sizes
    )


@app.post("/data/validate", response_model=ValidateResponse)
def validate_data(req: ValidateRequest) -> ValidateResponse:
    try:
        dataset = load_dataset(
            req.feature_path,
            req.examples_path,
            req.categories_path,
            expect_canonical=req.expect_canonical,
        )
    except HeadUQError as exc:
        return ValidateResponse(ok=False, errors=[f"{type(exc).__name__}: {exc}"])
    except FileNotFoundError as exc:
        return ValidateResponse(ok=False, errors=[str(exc)])
    hd = subset_view(dataset, split="validation", high_disagreement=True)
    return ValidateResponse(
        ok=True,
        n_examples=dataset.n_examples,
        n_categories=dataset.n_categories,
        dim=dataset.dim,
        split_sizes=dataset.split_sizes,
        high_disagreement_validation=int(len(hd)),
        warnings=list(dataset.load_warnings),
    )


@app.post("/experiments/grid", response_model=GridResponse)
def grid(req: ExperimentRequest) -> GridResponse:
    config = _config_from(req)
    bundle = _guard(run_grid, config, only=req.only)
    return GridResponse(
        status=bundle["status"],
        config_hash=bundle["config_hash"],
        out_dir=config.out_dir,
        n_runs=bundle["n_runs"],
        runs=bundle["runs"],
        failures=bundle["failures"],
    )


@app.post("/experiments/ablation", response_model=JsonResponse)
def ablation(req: ExperimentRequest) -> JsonResponse:
    config = _config_from(req)
    return JsonResponse(out_dir=config.out_dir, result=_guard(run_ablation, config))


@app.post("/experiments/active-learning", response_model=JsonResponse)
def active_learning(req: ExperimentRequest) -> JsonResponse:
    config = _config_from(req)
    return JsonResponse(out_dir=config.out_dir, result=_guard(run_active_learning, config))


@app.post("/experiments/calibrate", response_model=JsonResponse)
def calibrate(req: ExperimentRequest) -> JsonResponse:
    config = _config_from(req)
    return JsonResponse(out_dir=config.out_dir, result=_guard(run_calibration_pass, config))


@app.post("/experiments/stats", response_model=JsonResponse)
def stats(req: ExperimentRequest) -> JsonResponse:
    config = _config_from(req)
    return JsonResponse(out_dir=config.out_dir, result=_guard(run_stats_pass, config))


@app.post("/experiments/subset-diagnostic", response_model=JsonResponse)
def subset_diagnostic(req: ExperimentRequest) -> JsonResponse:
    config = _config_from(req)
    return JsonResponse(out_dir=config.out_dir, result=_guard(run_subset_diagnostic, config))


@app.post("/experiments/report", response_model=JsonResponse)
def report(req: ExperimentRequest) -> JsonResponse:
    config = _config_from(req)
    return JsonResponse(out_dir=config.out_dir, result=_guard(write_report_csvs, config))
