"""Per-modality affine heads mapping raw embeddings into the shared space.

Each head is h = W z + b with optional L2 output normalization (default
on: downstream cosine similarities then reduce to dot products and the
temperature keeps a fixed scale).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import counters
from .dataio import ModalityKind, MODALITIES
from .errors import ParameterError, ShapeError
from .rng import derive_seed, generator
from .tensor import Tensor, add, l2_normalize_rows, matmul, reshape, swap_last_axes


@dataclass
class ProjectionHead:
    modality: ModalityKind
    W: Tensor  # (d_s, d_m)
    b: Tensor  # (d_s,)
    normalize_output: bool = True

    @property
    def d_m(self) -> int:
        return self.W.shape[1]

    @property
    def d_s(self) -> int:
        return self.W.shape[0]


def project(head: ProjectionHead, z: Tensor | np.ndarray) -> Tensor:
    """Map raw embeddings (d_m,) or (n, d_m) into the shared space.

    Rows whose affine image has norm below 1e-12 fall back to the first
    basis vector instead of producing NaN; the fallback bumps a counter.
    """
    if not isinstance(z, Tensor):
        z = Tensor(z)
    single = z.ndim == 1
    if single:
        z = reshape(z, (1, z.shape[0]))
    if z.shape[-1] != head.d_m:
        raise ShapeError(
            f"{head.modality.name} projection expects dim {head.d_m}, got {z.shape[-1]}"
        )
    h = add(matmul(z, swap_last_axes(head.W)), head.b)
    if head.normalize_output:
        h = l2_normalize_rows(
            h, guard=lambda n: counters.bump("projection.zero_norm_fallback", n)
        )
    return reshape(h, (h.shape[-1],)) if single else h


def init_heads(
    dims: tuple[int, int, int], d_s: int, seed: int, normalize_output: bool = True
) -> dict[ModalityKind, ProjectionHead]:
    """Xavier-uniform weights (bound sqrt(6/(d_m+d_s))), zero bias, per modality."""
    if d_s < 2:
        raise ParameterError(f"shared dim must be >= 2, got {d_s}")
    heads = {}
    for m in MODALITIES:
        d_m = dims[m]
        gen = generator(derive_seed(seed, f"proj-init:{m.name}"))
        bound = np.sqrt(6.0 / (d_m + d_s))
        W = Tensor(gen.uniform(-bound, bound, size=(d_s, d_m)), requires_grad=True)
        b = Tensor(np.zeros(d_s), requires_grad=True)
        heads[m] = ProjectionHead(modality=m, W=W, b=b, normalize_output=normalize_output)
    return heads
