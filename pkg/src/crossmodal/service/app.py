"""FastAPI application exposing the pipeline.

Error contract: every failure body is {"detail": {"message", "exit_code"}}
with exit_code 2 (config/arguments), 3 (I/O), 4 (numeric abort), or
5 (shape/compatibility); thin clients exit with that code.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import default_config
from ..errors import (
    CheckpointError,
    ContractError,
    CrossmodalError,
    FormatError,
    MetricError,
    ParameterError,
    ShapeError,
    StratificationError,
    TrainingError,
)
from . import ops, schemas

app = FastAPI(title="crossmodal", version=__version__)

_HTTP_STATUS = {2: 400, 3: 404, 4: 500, 5: 409}


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, (ShapeError, CheckpointError)):
        return 5
    if isinstance(exc, TrainingError):
        return 4
    if isinstance(exc, (FormatError, FileNotFoundError, OSError)):
        return 3
    if isinstance(exc, (ParameterError, StratificationError, MetricError, ContractError)):
        return 2
    return 1


def _error_response(exc: Exception) -> JSONResponse:
    code = exit_code_for(exc)
    return JSONResponse(
        status_code=_HTTP_STATUS.get(code, 500),
        content={"detail": {"message": str(exc), "exit_code": code}},
    )


@app.exception_handler(CrossmodalError)
async def _crossmodal_error(_request: Request, exc: CrossmodalError):
    return _error_response(exc)


@app.exception_handler(FileNotFoundError)
async def _not_found(_request: Request, exc: FileNotFoundError):
    return _error_response(exc)


@app.exception_handler(RequestValidationError)
async def _bad_request(_request: Request, exc: RequestValidationError):
    return JSONResponse(
        status_code=400,
        content={"detail": {"message": str(exc), "exit_code": 2}},
    )


@app.get("/healthz", response_model=schemas.HealthResponse)
def healthz():
    return schemas.HealthResponse(status="ok", version=__version__)


@app.get("/config/default")
def config_default():
    return default_config().model_dump(mode="json")


@app.post("/synth", response_model=schemas.SynthResponse)
def synth(req: schemas.SynthRequest):
    return ops.do_synth(req)


@app.post("/train", response_model=schemas.TrainResponse)
def train(req: schemas.TrainRequest):
    return ops.do_train(req)


@app.post("/eval", response_model=schemas.EvalResponse)
def evaluate(req: schemas.EvalRequest):
    return ops.do_eval(req)


@app.post("/ablate", response_model=schemas.AblateResponse)
def ablate(req: schemas.AblateRequest):
    return ops.do_ablate(req)


@app.post("/profile", response_model=schemas.ProfileResponse)
def profile_model(req: schemas.ProfileRequest):
    return ops.do_profile(req)
