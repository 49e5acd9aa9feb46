"""Fusion of the refined modality tokens and the binary classifier head.

Concatenation is the default fusion (it keeps every coordinate); mean and
weighted-sum variants exist for the fusion ablation. The classifier is a
single 64-wide hidden layer with ReLU and dropout, then a sigmoid output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, ShapeError
from .rng import derive_seed, generator
from .tensor import (
    Tensor,
    add,
    dropout,
    exp,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    sub,
    sum_,
    swap_last_axes,
)

FUSION_KINDS = ("concat", "mean", "weighted")
HIDDEN_WIDTH = 64


@dataclass(frozen=True)
class FusionStrategy:
    kind: str
    weights: tuple[float, float, float] | None = None

    def validate(self) -> None:
        if self.kind not in FUSION_KINDS:
            raise ParameterError(f"unknown fusion kind {self.kind!r}")
        if self.kind == "weighted":
            if self.weights is None or len(self.weights) != 3:
                raise ParameterError("weighted fusion needs three weights")
            if any(w < 0 for w in self.weights):
                raise ParameterError(f"fusion weights must be >= 0, got {self.weights}")
            if abs(sum(self.weights) - 1.0) > 1e-9:
                raise ParameterError(f"fusion weights must sum to 1, got {self.weights}")
        elif self.weights is not None:
            raise ParameterError(f"{self.kind} fusion takes no weights")

    def fused_dim(self, d_s: int) -> int:
        return 3 * d_s if self.kind == "concat" else d_s


def fuse(refined: Tensor, strategy: FusionStrategy) -> Tensor:
    """Combine a (batch, 3, d_s) token stack into one vector per sample."""
    strategy.validate()
    single = refined.ndim == 2
    if single:
        refined = reshape(refined, (1, *refined.shape))
    if refined.ndim != 3 or refined.shape[1] != 3:
        raise ShapeError(f"fuse expects (batch, 3, d_s) tokens, got {refined.shape}")
    if strategy.kind == "concat":
        out = reshape(refined, (refined.shape[0], 3 * refined.shape[2]))
    elif strategy.kind == "mean":
        out = mean(refined, axis=1)
    else:
        w = np.asarray(strategy.weights, dtype=np.float64).reshape(1, 3, 1)
        out = sum_(mul(refined, Tensor(w)), axis=1)
    return reshape(out, (out.shape[-1],)) if single else out


@dataclass
class ClassifierHead:
    w1: Tensor  # (64, d_in)
    b1: Tensor  # (64,)
    w2: Tensor  # (1, 64)
    b2: Tensor  # (1,)

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]


def init_classifier(d_in: int, seed: int) -> ClassifierHead:
    gen = generator(derive_seed(seed, "classifier-init"))
    b_hidden = math.sqrt(6.0 / (d_in + HIDDEN_WIDTH))
    b_out = math.sqrt(6.0 / (HIDDEN_WIDTH + 1))
    return ClassifierHead(
        w1=Tensor(gen.uniform(-b_hidden, b_hidden, size=(HIDDEN_WIDTH, d_in)), requires_grad=True),
        b1=Tensor(np.zeros(HIDDEN_WIDTH), requires_grad=True),
        w2=Tensor(gen.uniform(-b_out, b_out, size=(1, HIDDEN_WIDTH)), requires_grad=True),
        b2=Tensor(np.zeros(1), requires_grad=True),
    )


class Prediction(NamedTuple):
    prob: Tensor  # sigmoid output, strictly in (0, 1)
    logit: Tensor  # pre-sigmoid value; feed this to bce_loss


def classify(
    head: ClassifierHead,
    fused: Tensor,
    train_mode: bool = False,
    dropout_p: float = 0.0,
    seed: int = 0,
) -> Prediction:
    """Manipulation probability for fused vectors (d_in,) or (batch, d_in)."""
    single = fused.ndim == 1
    if single:
        fused = reshape(fused, (1, fused.shape[0]))
    if fused.shape[-1] != head.d_in:
        raise ShapeError(f"classifier expects dim {head.d_in}, got {fused.shape[-1]}")
    hidden = relu(add(matmul(fused, swap_last_axes(head.w1)), head.b1))
    hidden = dropout(hidden, dropout_p, derive_seed(seed, "classifier-drop"), train_mode)
    logit = reshape(add(matmul(hidden, swap_last_axes(head.w2)), head.b2), (fused.shape[0],))
    if single:
        logit = reshape(logit, ())
    return Prediction(prob=sigmoid(logit), logit=logit)


def bce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy, computed from pre-sigmoid logits.

    Stable form: relu(l) - l*y + log(1 + exp(-|l|)); never exponentiates a
    positive argument.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"labels shape {y.shape} does not match logits shape {logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ParameterError("labels must be 0 or 1")
    neg_abs = neg(add(relu(logits), relu(neg(logits))))
    per_item = add(sub(relu(logits), mul(logits, Tensor(y))), log(add(Tensor(1.0), exp(neg_abs))))
    return mean(per_item)


def total_loss(contrastive: Tensor, classification: Tensor, lam: float) -> Tensor:
    """Blend lam * contrastive + (1 - lam) * classification; lam in [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"loss blend weight must be in [0, 1], got {lam}")
    return add(mul(Tensor(lam), contrastive), mul(Tensor(1.0 - lam), classification))


def named_classifier_parameters(head: ClassifierHead) -> list[tuple[str, Tensor]]:
    return [
        ("classifier.w1", head.w1),
        ("classifier.b1", head.b1),
        ("classifier.w2", head.w2),
        ("classifier.b2", head.b2),
    ]
