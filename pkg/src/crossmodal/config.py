"""Run configuration: one JSON document covering synthesis and training.

Unknown keys are rejected everywhere. All randomness flows from the
top-level seed: a section that leaves its own seed null gets a sub-seed
derived by hashing (seed, section name). The config hash is the CRC-64
of the canonical (sorted, compact) serialization of the resolved
document.
"""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, ValidationError

from .crc64 import crc64_hex
from .dataio import SynthConfig
from .errors import ParameterError
from .rng import derive_seed
from .trainer import TrainConfig


class SynthSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_real: int = 1000
    n_fake: int = 1000
    latent_dim: int = 16
    dims: tuple[int, int, int] = (64, 96, 80)
    noise_sigma: float = 0.3
    mode: str = "easy"
    fake_shift: float = 1.0
    seed: int | None = None

    def resolve(self, run_seed: int) -> SynthConfig:
        cfg = SynthConfig(
            n_real=self.n_real,
            n_fake=self.n_fake,
            latent_dim=self.latent_dim,
            dims=tuple(self.dims),
            noise_sigma=self.noise_sigma,
            mode=self.mode,
            fake_shift=self.fake_shift,
            seed=self.seed if self.seed is not None else derive_seed(run_seed, "synth"),
        )
        cfg.validate()
        return cfg


class TrainSection(TrainConfig):
    seed: int | None = None  # null: derive from the run seed

    def resolve(self, run_seed: int) -> TrainConfig:
        data = self.model_dump()
        if data["seed"] is None:
            data["seed"] = derive_seed(run_seed, "train")
        return TrainConfig.model_validate(data)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    synth: SynthSection = SynthSection()
    train: TrainSection = TrainSection()

    def synth_config(self) -> SynthConfig:
        return self.synth.resolve(self.seed)

    def train_config(self) -> TrainConfig:
        return self.train.resolve(self.seed)

    def with_seed(self, seed: int) -> "RunConfig":
        """Top-level seed override; section seeds go back to derived."""
        out = self.model_copy(deep=True)
        out.seed = seed
        out.synth.seed = None
        out.train.seed = None
        return out

    def resolved_dict(self) -> dict:
        return {
            "seed": self.seed,
            "synth": {**self.synth.model_dump(mode="json"), "seed": self.synth_config().seed},
            "train": self.train_config().model_dump(mode="json"),
        }


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    return crc64_hex(canonical_json(config.resolved_dict()).encode("utf-8"))


def default_config() -> RunConfig:
    return RunConfig()


def default_config_json() -> str:
    return json.dumps(RunConfig().model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def parse_config(payload: dict | str | bytes) -> RunConfig:
    try:
        if isinstance(payload, (str, bytes)):
            payload = json.loads(payload)
        return RunConfig.model_validate(payload)
    except json.JSONDecodeError as e:
        raise ParameterError(f"config is not valid JSON: {e}") from e
    except ValidationError as e:
        raise ParameterError(f"invalid config: {e}") from e


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())
