"""Request/response models for the HTTP service.

Every run endpoint takes the same shape: a config payload (the JSON
document ``ExperimentConfig`` serializes to) plus optional dotted-path
overrides, so a client can hold one config file and vary single fields
per request.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequest(BaseModel):
    config: dict
    overrides: list[str] = Field(default_factory=list)


class GenDataRequest(RunRequest):
    file_format: str = "csv"


class TrainRequest(RunRequest):
    stop_after: Optional[int] = None


class PathsResponse(BaseModel):
    paths: dict[str, str]


class EpochRow(BaseModel):
    epoch: int
    hp: float
    sdh: float
    bceq: float
    proxy_bceq: float
    total: float
    lr: float
    seconds: float


class TrainResponse(BaseModel):
    epochs_run: int
    total_epochs: int
    history: list[EpochRow]


class EvalResponse(BaseModel):
    map_at_m: float
    m: int
    pr_curve: list[tuple[float, float]]
    p_at_top: list[tuple[int, float]]


class TableResponse(BaseModel):
    rows: list[dict]
    csv_path: str


class SearchRequest(BaseModel):
    run_dir: str
    features: list[list[float]]
    m: int = 10


class SearchHit(BaseModel):
    id: int
    distance: int


class SearchResponse(BaseModel):
    results: list[list[SearchHit]]
