"""End-to-end training: hyperparameter schema, the optimization loop,
checkpoint serialization, and an analytic/wall-clock profiler.

One training step is: project each modality into the shared space,
compute the contrastive alignment loss over the batch grid, refine the
three tokens with the transformer block, fuse, classify, blend the two
losses, backpropagate, and take one Adam step with the scheduled rate.
All randomness (shuffles, dropout masks, init) derives from the single
config seed, so a (config, seed) pair reproduces bit-identical runs.
"""

from __future__ import annotations

import json
import statistics
import struct
import time
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import counters
from .contrastive import ContrastiveConfig, build_pairs, contrastive_loss, grid_entries
from .crc64 import crc64
from .dataio import MODALITIES, EmbeddingBundle, ModalityKind, Sample
from .errors import (
    CheckpointError,
    ParameterError,
    ShapeError,
    TrainingError,
)
from .fusion import (
    ClassifierHead,
    FusionStrategy,
    bce_loss,
    classify,
    fuse,
    init_classifier,
    named_classifier_parameters,
    total_loss,
)
from .metrics import ScoreSet, accuracy, auc, eer
from .optim import AdamState, adam_step, lr_schedule
from .projection import ProjectionHead, init_heads, project
from .refiner import RefinerBlock, init_refiner, named_refiner_parameters, refine
from .rng import derive_seed
from .tensor import FLOPS, Tensor, add, backward, concat, index_rows, matmul, mul, reshape, stack

CHECKPOINT_MAGIC = b"CCKP"
CHECKPOINT_VERSION = 1


class TrainConfig(BaseModel):
    """All optimizer/schedule/architecture knobs, with the defaults used
    throughout: lr 1e-3 decayed 10x every 10 epochs, batch 32, 50 epochs,
    Adam(0.9, 0.999), weight decay 1e-4, dropout 0.5, ReLU."""

    model_config = ConfigDict(extra="forbid")

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    dropout: float = 0.5
    activation: str = "relu"
    optimizer: str = "adam"
    decay_factor: float = 0.1
    decay_every: int = 10
    lam: float = 0.5
    tau: float = 0.07
    d_s: int = 32
    refiner_layers: int = 2
    refiner_heads: int = 4
    fusion: str = "concat"
    fusion_weights: tuple[float, float, float] | None = None
    pair_policy: str = "same_sample_authentic"
    denominator_mode: str = "standard"
    normalize_projection: bool = True
    contrastive_warmup_epochs: int = 0
    eval_fraction: float = 0.2
    seed: int = 0

    @field_validator("lr", "tau", "decay_factor")
    @classmethod
    def _positive(cls, v, info):
        if v <= 0:
            raise ValueError(f"{info.field_name} must be positive, got {v}")
        return v

    @field_validator("epochs", "decay_every", "refiner_heads")
    @classmethod
    def _at_least_one(cls, v, info):
        if v < 1:
            raise ValueError(f"{info.field_name} must be >= 1, got {v}")
        return v

    @field_validator("batch_size")
    @classmethod
    def _batch(cls, v):
        if v < 2:
            raise ValueError(f"batch_size must be >= 2, got {v}")
        return v

    @field_validator("dropout")
    @classmethod
    def _dropout(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {v}")
        return v

    @field_validator("lam")
    @classmethod
    def _lam(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {v}")
        return v

    @field_validator("eval_fraction")
    @classmethod
    def _eval_fraction(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError(f"eval_fraction must be in (0, 1), got {v}")
        return v

    @field_validator("weight_decay", "contrastive_warmup_epochs")
    @classmethod
    def _nonnegative(cls, v, info):
        if v < 0:
            raise ValueError(f"{info.field_name} must be >= 0, got {v}")
        return v

    @field_validator("activation")
    @classmethod
    def _activation(cls, v):
        if v != "relu":
            raise ValueError(f"only relu activation is supported, got {v!r}")
        return v

    @field_validator("optimizer")
    @classmethod
    def _optimizer(cls, v):
        if v != "adam":
            raise ValueError(f"only the adam optimizer is supported, got {v!r}")
        return v

    @field_validator("refiner_layers")
    @classmethod
    def _layers(cls, v):
        if v < 0:
            raise ValueError(f"refiner_layers must be >= 0, got {v}")
        return v

    @model_validator(mode="after")
    def _check_cross_field(self):
        if self.d_s < 2:
            raise ValueError(f"d_s must be >= 2, got {self.d_s}")
        if self.d_s % self.refiner_heads != 0:
            raise ValueError(
                f"d_s={self.d_s} must be divisible by refiner_heads={self.refiner_heads}"
            )
        FusionStrategy(kind=self.fusion, weights=self.fusion_weights).validate()
        ContrastiveConfig(
            tau=self.tau, denominator_mode=self.denominator_mode, pair_policy=self.pair_policy
        ).validate()
        return self

    def fusion_strategy(self) -> FusionStrategy:
        return FusionStrategy(kind=self.fusion, weights=self.fusion_weights)

    def contrastive_config(self) -> ContrastiveConfig:
        return ContrastiveConfig(
            tau=self.tau, denominator_mode=self.denominator_mode, pair_policy=self.pair_policy
        )


class TrainedModel:
    """Projection heads + absent-modality embeddings + refiner + classifier."""

    def __init__(
        self,
        config: TrainConfig,
        dims: tuple[int, int, int],
        heads: dict[ModalityKind, ProjectionHead],
        absent: dict[ModalityKind, Tensor],
        refiner: RefinerBlock | None,
        classifier: ClassifierHead,
        history: list[dict] | None = None,
    ):
        self.config = config
        self.dims = tuple(dims)
        self.heads = heads
        self.absent = absent
        self.refiner = refiner
        self.classifier = classifier
        self.history = history if history is not None else []

    @classmethod
    def initialize(cls, config: TrainConfig, dims: tuple[int, int, int]) -> "TrainedModel":
        heads = init_heads(
            dims, config.d_s, derive_seed(config.seed, "init:projection"),
            normalize_output=config.normalize_projection,
        )
        absent = {
            m: Tensor(np.zeros(config.d_s), requires_grad=True) for m in MODALITIES
        }
        refiner = (
            init_refiner(
                config.d_s,
                config.refiner_heads,
                config.refiner_layers,
                derive_seed(config.seed, "init:refiner"),
            )
            if config.refiner_layers > 0
            else None
        )
        classifier = init_classifier(
            config.fusion_strategy().fused_dim(config.d_s),
            derive_seed(config.seed, "init:classifier"),
        )
        return cls(config, dims, heads, absent, refiner, classifier)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params: list[tuple[str, Tensor]] = []
        for m in MODALITIES:
            params.append((f"projection.{m.name}.W", self.heads[m].W))
            params.append((f"projection.{m.name}.b", self.heads[m].b))
        for m in MODALITIES:
            params.append((f"absent.{m.name}", self.absent[m]))
        if self.refiner is not None:
            params.extend(named_refiner_parameters(self.refiner))
        params.extend(named_classifier_parameters(self.classifier))
        return params

    def check_dims(self, bundle: EmbeddingBundle) -> None:
        for m in MODALITIES:
            present = any(s.embedding(m) is not None for s in bundle.samples)
            if present and bundle.dims[m] != self.dims[m]:
                raise ShapeError(
                    f"{m.name} dim mismatch: model expects {self.dims[m]}, "
                    f"data has {bundle.dims[m]}"
                )

    def _modality_slots(self, samples: list[Sample]) -> tuple[dict[ModalityKind, Tensor], Tensor | None, list[tuple[int, int]]]:
        """Per-modality (batch, d_s) slot matrices, the contrastive grid
        rows, and the grid entries.

        Absent slots get the learned absent embedding; only present
        embeddings join the contrastive grid.
        """
        n = len(samples)
        projected: dict[ModalityKind, Tensor] = {}
        row_index: dict[tuple[int, int], int] = {}
        slots: dict[ModalityKind, Tensor] = {}
        blocks: list[Tensor] = []
        offset = 0
        for m in MODALITIES:
            rows = [i for i, s in enumerate(samples) if s.embedding(m) is not None]
            if rows:
                z = Tensor(np.stack([samples[i].embedding(m) for i in rows]))
                h = project(self.heads[m], z)
                projected[m] = h
                blocks.append(h)
                for pos, i in enumerate(rows):
                    row_index[(i, int(m))] = offset + pos
                offset += len(rows)
            if len(rows) == n:
                slots[m] = projected[m]
            else:
                parts = []
                if rows:
                    scatter = np.zeros((n, len(rows)))
                    scatter[rows, np.arange(len(rows))] = 1.0
                    parts.append(matmul(Tensor(scatter), projected[m]))
                indicator = np.ones((n, 1))
                indicator[rows] = 0.0
                parts.append(mul(Tensor(indicator), reshape(self.absent[m], (1, self.config.d_s))))
                slots[m] = parts[0] if len(parts) == 1 else add(parts[0], parts[1])
        entries = grid_entries(samples)
        if blocks:
            all_h = blocks[0] if len(blocks) == 1 else concat(blocks, axis=0)
            perm = np.array([row_index[e] for e in entries], dtype=np.intp)
            grid = index_rows(all_h, perm)
        else:  # unreachable for validated bundles
            grid = None
        return slots, grid, entries

    def forward_batch(
        self, samples: list[Sample], train_mode: bool, seed: int
    ) -> tuple[Tensor, Tensor, Tensor]:
        """(contrastive loss, classification loss, probabilities) for one batch."""
        cfg = self.config
        slots, grid, _entries = self._modality_slots(samples)
        if len(samples) >= 2:
            pairs = build_pairs(samples, cfg.pair_policy)
            l_con = contrastive_loss(grid, pairs, cfg.contrastive_config())
        else:
            counters.bump("trainer.batch_too_small_for_contrastive")
            l_con = Tensor(0.0)
        tokens = stack([slots[m] for m in MODALITIES], axis=1)
        if self.refiner is not None:
            tokens = refine(
                self.refiner,
                tokens,
                train_mode=train_mode,
                dropout_p=cfg.dropout,
                seed=derive_seed(seed, "refine"),
            )
        fused = fuse(tokens, cfg.fusion_strategy())
        pred = classify(
            self.classifier,
            fused,
            train_mode=train_mode,
            dropout_p=cfg.dropout,
            seed=derive_seed(seed, "classify"),
        )
        labels = np.array([s.label for s in samples], dtype=np.float64)
        l_cls = bce_loss(pred.logit, labels)
        return l_con, l_cls, pred.prob

    def scores(self, bundle: EmbeddingBundle) -> ScoreSet:
        """Manipulation scores for a whole bundle (eval mode, one pass)."""
        if not bundle.samples:
            raise ParameterError("cannot score an empty bundle")
        self.check_dims(bundle)
        slots, _grid, _entries = self._modality_slots(bundle.samples)
        tokens = stack([slots[m] for m in MODALITIES], axis=1)
        if self.refiner is not None:
            tokens = refine(self.refiner, tokens, train_mode=False)
        fused = fuse(tokens, self.config.fusion_strategy())
        pred = classify(self.classifier, fused, train_mode=False)
        return ScoreSet(scores=pred.prob.data.copy(), labels=bundle.labels())


def _epoch_eval(model: TrainedModel, eval_bundle: EmbeddingBundle) -> dict:
    scores = model.scores(eval_bundle)
    out = {"eval_acc": accuracy(scores)}
    if scores.n_real() > 0 and scores.n_fake() > 0:
        out["eval_eer"] = eer(scores)
        out["eval_auc"] = auc(scores)
    else:
        out["eval_eer"] = None
        out["eval_auc"] = None
    return out


def train(
    train_bundle: EmbeddingBundle,
    eval_bundle: EmbeddingBundle,
    config: TrainConfig,
    quiet: bool = True,
) -> TrainedModel:
    """Run the full training loop; returns the model with per-epoch history."""
    if not train_bundle.samples or not eval_bundle.samples:
        raise ParameterError("train and eval bundles must be nonempty")
    labels = set(train_bundle.labels().tolist())
    if labels != {0, 1}:
        raise ParameterError(f"training set must contain both labels, got {sorted(labels)}")
    model = TrainedModel.initialize(config, train_bundle.dims)
    model.check_dims(train_bundle)
    model.check_dims(eval_bundle)
    params = model.named_parameters()
    state = AdamState(beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    n_train = len(train_bundle)
    for epoch in range(config.epochs):
        lr = lr_schedule(config.lr, epoch, config.decay_factor, config.decay_every)
        # two-phase schedule: contrastive-only warmup, then the blended
        # loss. lam == 0 means contrastive-off everywhere, warmup included,
        # so the ablation stays a pure config change.
        warmup = epoch < config.contrastive_warmup_epochs and config.lam > 0
        lam = 1.0 if warmup else config.lam
        sum_total = sum_con = sum_cls = 0.0
        for batch_idx, batch in enumerate(_batches(train_bundle, config, epoch)):
            step_seed = derive_seed(config.seed, f"step:e{epoch}:b{batch_idx}")
            l_con, l_cls, _prob = model.forward_batch(batch, train_mode=True, seed=step_seed)
            loss = total_loss(l_con, l_cls, lam)
            if not np.isfinite(loss.data):
                raise TrainingError("non-finite training loss", epoch=epoch, batch=batch_idx)
            for _name, p in params:
                p.zero_grad()
            backward(loss, leaves=[p for _n, p in params])
            adam_step(params, state, lr=lr, weight_decay=config.weight_decay)
            w = len(batch)
            sum_total += float(loss.data) * w
            sum_con += float(l_con.data) * w
            sum_cls += float(l_cls.data) * w
        row = {
            "epoch": epoch,
            "lr": lr,
            "loss_total": sum_total / n_train,
            "loss_contrastive": sum_con / n_train,
            "loss_classification": sum_cls / n_train,
        }
        row.update(_epoch_eval(model, eval_bundle))
        model.history.append(row)
        if not quiet:
            print(
                f"epoch {epoch:3d}  lr {lr:.2e}  loss {row['loss_total']:.4f}  "
                f"eval_auc {row['eval_auc']}  eval_acc {row['eval_acc']:.4f}"
            )
    return model


def _batches(bundle: EmbeddingBundle, config: TrainConfig, epoch: int):
    from .dataio import batch_iter

    return batch_iter(bundle, config.batch_size, config.seed, epoch)


# ---------------------------------------------------------------------------
# checkpoint serialization


def _canonical_checkpoint_config(model: TrainedModel) -> bytes:
    blob = {"dims": list(model.dims), "train": model.config.model_dump(mode="json")}
    return json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")


def model_config_hash(model: TrainedModel) -> str:
    """CRC-64 of the canonical config blob, identifying the model setup."""
    from .crc64 import crc64_hex

    return crc64_hex(_canonical_checkpoint_config(model))


def checkpoint_to_bytes(model: TrainedModel) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<B", CHECKPOINT_VERSION)]
    cfg = _canonical_checkpoint_config(model)
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    for name, p in model.named_parameters():
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", p.data.ndim))
        parts.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", crc64(body))


def save_checkpoint(model: TrainedModel, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(model))


def checkpoint_from_bytes(buf: bytes) -> TrainedModel:
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    if len(buf) < 4 + 1 + 4 + 8:
        raise CheckpointError("file too short", offset=len(buf))
    body, trailer = buf[:-8], buf[-8:]
    (stored_crc,) = struct.unpack("<Q", trailer)
    if stored_crc != crc64(body):
        raise CheckpointError("CRC mismatch", offset=len(body))
    pos = 4
    (version,) = struct.unpack("<B", body[pos : pos + 1])
    pos += 1
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", offset=4)
    (cfg_len,) = struct.unpack("<I", body[pos : pos + 4])
    pos += 4
    if pos + cfg_len > len(body):
        raise CheckpointError("truncated config blob", offset=pos)
    try:
        blob = json.loads(body[pos : pos + cfg_len].decode("utf-8"))
        config = TrainConfig.model_validate(blob["train"])
        dims = tuple(int(d) for d in blob["dims"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"invalid config blob: {e}", offset=pos) from e
    pos += cfg_len
    stored: dict[str, np.ndarray] = {}
    while pos < len(body):
        if pos + 2 > len(body):
            raise CheckpointError("truncated parameter name length", offset=pos)
        (name_len,) = struct.unpack("<H", body[pos : pos + 2])
        pos += 2
        if pos + name_len > len(body):
            raise CheckpointError("truncated parameter name", offset=pos)
        name = body[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 1 > len(body):
            raise CheckpointError(f"truncated rank for {name!r}", offset=pos)
        (rank,) = struct.unpack("<B", body[pos : pos + 1])
        pos += 1
        if pos + 4 * rank > len(body):
            raise CheckpointError(f"truncated dims for {name!r}", offset=pos)
        shape = struct.unpack(f"<{rank}I", body[pos : pos + 4 * rank])
        pos += 4 * rank
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if rank else 8
        if pos + n_bytes > len(body):
            raise CheckpointError(f"truncated values for {name!r}", offset=pos)
        stored[name] = np.frombuffer(body[pos : pos + n_bytes], dtype="<f8").reshape(shape)
        pos += n_bytes
    model = TrainedModel.initialize(config, dims)
    params = model.named_parameters()
    expected = [n for n, _ in params]
    if set(expected) != set(stored):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise CheckpointError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, p in params:
        if stored[name].shape != p.data.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {stored[name].shape}, expected {p.data.shape}"
            )
        p.data = stored[name].astype(np.float64).copy()
    return model


def load_checkpoint(path: str | Path) -> TrainedModel:
    return checkpoint_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# profiling


def profile(model: TrainedModel, bundle: EmbeddingBundle, repetitions: int) -> dict:
    """Self-measured inference cost: analytic flops (2mkn per matmul, one
    flop per elementwise output), median wall-clock per sample, parameter
    memory from shapes."""
    if repetitions < 3:
        raise ParameterError(f"profile needs >= 3 repetitions, got {repetitions}")
    if not bundle.samples:
        raise ParameterError("cannot profile an empty bundle")
    n = len(bundle)
    FLOPS.start()
    model.scores(bundle)
    flops_total = FLOPS.stop()
    times_ms = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        model.scores(bundle)
        times_ms.append((time.perf_counter() - t0) * 1000.0 / n)
    param_bytes = sum(p.data.size * 8 for _n, p in model.named_parameters())
    # wall-clock numbers live under "timing" so everything else in the
    # report is deterministic
    return {
        "flop_count_total": flops_total,
        "flop_count_per_sample": flops_total / n,
        "peak_param_bytes": param_bytes,
        "repetitions": repetitions,
        "n_samples": n,
        "timing": {"inference_ms_per_sample": statistics.median(times_ms)},
    }
