"""Pydantic request/response envelopes for the HTTP API.

Experiment configs travel as plain JSON objects and are validated by the
core ``ExperimentConfig.from_dict`` so CLI and HTTP share one schema.
"""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class SyntheticRequest(BaseModel):
    out_dir: str
    n_examples: int = 5000
    n_categories: int = 3
    dim: int = 16
    n_annotators: int = 3
    seed: int = 0
    ambiguity: list[float] | None = None
    class_separation: float = 3.0
    feature_noise: float = 1.0


class SyntheticResponse(BaseModel):
    features: str
    examples: str
    categories: str
    n_examples: int
    split_sizes: dict[str, int]


class ValidateRequest(BaseModel):
    feature_path: str
    examples_path: str
    categories_path: str | None = None
    expect_canonical: bool = False


class ValidateResponse(BaseModel):
    ok: bool
    n_examples: int = 0
    n_categories: int = 0
    dim: int = 0
    split_sizes: dict[str, int] = Field(default_factory=dict)
    high_disagreement_validation: int = 0
    warnings: list[str] = Field(default_factory=list)
    errors: list[str] = Field(default_factory=list)


class ExperimentRequest(BaseModel):
    """Envelope for every experiment verb: a raw config object plus the
    optional run filter."""

    config: dict[str, Any]
    only: dict[str, list] | None = None


class GridResponse(BaseModel):
    status: str
    config_hash: str
    out_dir: str
    n_runs: int
    runs: list[str]
    failures: list[dict[str, str]] = Field(default_factory=list)


class JsonResponse(BaseModel):
    """Generic wrapper for verb outputs that are naturally one JSON blob."""

    out_dir: str
    result: dict[str, Any]
