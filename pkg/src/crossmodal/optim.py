"""Adam with decoupled weight decay, plus the step-decay learning rate rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, TrainingError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name; t counts steps."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: list[tuple[str, Tensor]],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected Adam update over all parameters, in place.

    Decay is decoupled: p <- p - lr*wd*p is applied before the Adam delta,
    so a parameter with zero gradient still shrinks when wd > 0. Missing
    gradients are treated as zero.
    """
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if state.m[name].shape != p.data.shape:
            raise ParameterError(
                f"optimizer state shape {state.m[name].shape} does not match "
                f"parameter {name!r} shape {p.data.shape}"
            )
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def lr_schedule(base_lr: float, epoch: int, decay_factor: float, decay_every: int) -> float:
    """Step decay: base_lr * decay_factor^(epoch // decay_every).

    Computed by successive multiplication so the decimal checkpoints
    (1e-3 -> 1e-4 -> 1e-5) come out exact in float64.
    """
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    lr = base_lr
    for _ in range(epoch // decay_every):
        lr *= decay_factor
    return lr
