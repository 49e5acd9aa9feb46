"""Request/response models for the HTTP service.

Paths are interpreted on the service host; when the CLI runs its default
in-process client they are ordinary local paths.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict

from ..config import RunConfig


class SynthRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = RunConfig()
    out_path: str


class SynthResponse(BaseModel):
    out_path: str
    n_samples: int
    n_real: int
    n_fake: int
    provenance: str
    config_hash: str


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = RunConfig()
    data_path: str
    out_dir: str
    epochs_override: int | None = None


class TrainResponse(BaseModel):
    checkpoint_path: str
    history_path: str
    report_path: str
    roc_csv_path: str
    det_csv_path: str
    final: dict
    config_hash: str
    timing: dict


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint_path: str
    data_path: str
    report_path: str | None = None
    acc_threshold: float = 0.5


class EvalResponse(BaseModel):
    eer: float
    auc: float
    acc: float
    n_real: int
    n_fake: int
    config_hash: str
    report_path: str | None
    roc_csv_path: str | None
    det_csv_path: str | None
    timing: dict


class AblateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = RunConfig()
    data_path: str
    out_dir: str
    seeds: int = 5


class AblateResponse(BaseModel):
    report_path: str
    n_seeds: int
    cells: dict
    panels: dict
    timing: dict


class ProfileRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint_path: str
    data_path: str
    repetitions: int = 5


class ProfileResponse(BaseModel):
    flop_count_total: int
    flop_count_per_sample: float
    peak_param_bytes: int
    repetitions: int
    n_samples: int
    timing: dict


class HealthResponse(BaseModel):
    status: str
    version: str
