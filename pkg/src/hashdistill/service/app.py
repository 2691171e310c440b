"""HTTP front-end: each pipeline operation behind one POST endpoint.

Domain errors (bad config values, missing artifacts, format problems)
map to 400 with the core error message; request-shape problems are
FastAPI's usual 422. The service runs pipeline operations synchronously
— it is a desk-scale experiment runner, not a job queue.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import ExperimentConfig, apply_overrides
from ..errors import HashDistillError
from ..pipeline import (
    run_ablation,
    run_deform_eval,
    run_encode,
    run_eval,
    run_gen_data,
    run_sweep_st,
    run_train,
    search_run,
)
from .schemas import (
    EpochRow,
    EvalResponse,
    GenDataRequest,
    HealthResponse,
    PathsResponse,
    RunRequest,
    SearchHit,
    SearchRequest,
    SearchResponse,
    TableResponse,
    TrainRequest,
    TrainResponse,
)

app = FastAPI(title="hashdistill", version=__version__)


@app.exception_handler(HashDistillError)
async def domain_error_handler(request: Request, exc: HashDistillError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


def _resolve(request: RunRequest) -> ExperimentConfig:
    payload = request.config
    if request.overrides:
        payload = apply_overrides(payload, request.overrides)
    return ExperimentConfig.from_dict(payload)


@app.get("/health", response_model=HealthResponse)
def health():
    return HealthResponse(status="ok", version=__version__)


@app.post("/data/generate", response_model=PathsResponse)
def generate_data(request: GenDataRequest):
    return PathsResponse(paths=run_gen_data(_resolve(request), request.file_format))


@app.post("/runs/train", response_model=TrainResponse)
def train(request: TrainRequest):
    config = _resolve(request)
    history = run_train(config, stop_after=request.stop_after)
    return TrainResponse(
        epochs_run=len(history),
        total_epochs=config.train.epochs,
        history=[
            EpochRow(
                epoch=s.epoch, hp=s.hp, sdh=s.sdh, bceq=s.bceq,
                proxy_bceq=s.proxy_bceq, total=s.total, lr=s.lr, seconds=s.seconds,
            )
            for s in history
        ],
    )


@app.post("/runs/encode", response_model=PathsResponse)
def encode(request: RunRequest):
    return PathsResponse(paths=run_encode(_resolve(request)))


@app.post("/runs/eval", response_model=EvalResponse)
def evaluate(request: RunRequest):
    report = run_eval(_resolve(request))
    return EvalResponse(
        map_at_m=report.map_at_m,
        m=report.m,
        pr_curve=list(report.pr_curve),
        p_at_top=list(report.p_at_top),
    )


@app.post("/runs/ablate", response_model=TableResponse)
def ablate(request: RunRequest):
    return TableResponse(**run_ablation(_resolve(request)))


@app.post("/runs/sweep-st", response_model=TableResponse)
def sweep_st(request: RunRequest):
    return TableResponse(**run_sweep_st(_resolve(request)))


@app.post("/runs/deform-eval", response_model=TableResponse)
def deform_eval(request: RunRequest):
    return TableResponse(**run_deform_eval(_resolve(request)))


@app.post("/search", response_model=SearchResponse)
def search(request: SearchRequest):
    ranked = search_run(request.run_dir, request.features, request.m)
    return SearchResponse(
        results=[
            [SearchHit(id=i, distance=d) for i, d in hits] for hits in ranked
        ]
    )
