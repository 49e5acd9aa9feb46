"""Positive/negative pair construction and the contrastive alignment loss.

Pairs index a flattened (sample, modality) grid over the embeddings
present in a batch, sample-major. Positives pull cross-modal views of
the same authentic sample together; everything from other samples (plus
the cross-modal views of a manipulated sample itself) pushes away.

Two denominators ship: `standard` includes the positive term (InfoNCE,
loss >= 0) and is the default; `paper_literal` sums the negatives only,
exactly as the printed formula reads, and can go negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import counters
from .dataio import Sample
from .errors import ParameterError
from .tensor import (
    Tensor,
    div,
    index_rows,
    l2_normalize_rows,
    logsumexp_rows,
    matmul,
    mean,
    sub,
    swap_last_axes,
    take_pairs,
)

DENOMINATOR_MODES = ("standard", "paper_literal")
PAIR_POLICIES = ("same_sample_authentic", "supervised_label")


@dataclass
class ContrastiveConfig:
    tau: float = 0.07
    denominator_mode: str = "standard"
    pair_policy: str = "same_sample_authentic"

    def validate(self) -> None:
        if self.tau <= 0:
            raise ParameterError(f"temperature must be positive, got {self.tau}")
        if self.denominator_mode not in DENOMINATOR_MODES:
            raise ParameterError(f"unknown denominator_mode {self.denominator_mode!r}")
        if self.pair_policy not in PAIR_POLICIES:
            raise ParameterError(f"unknown pair_policy {self.pair_policy!r}")


@dataclass
class PairSet:
    """positives: ordered (anchor, partner) index pairs; negatives[i]: indices."""

    positives: list[tuple[int, int]]
    negatives: list[list[int]]
    n_items: int

    def validate(self) -> None:
        for i, j in self.positives:
            if i == j:
                raise ParameterError(f"self-pair ({i}, {j}) is not a valid positive")
            if not (0 <= i < self.n_items and 0 <= j < self.n_items):
                raise ParameterError(f"pair ({i}, {j}) out of range for {self.n_items} items")
            if not self.negatives[i]:
                raise ParameterError(f"anchor {i} has no negatives")
        for i, negs in enumerate(self.negatives):
            for k in negs:
                if k == i:
                    raise ParameterError(f"anchor {i} lists itself as a negative")
                if not 0 <= k < self.n_items:
                    raise ParameterError(f"negative {k} out of range for {self.n_items} items")


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """u.v / (|u||v|); raises on zero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ParameterError("cosine similarity is undefined for a zero vector")
    return float(u @ v / (nu * nv))


def grid_entries(batch: list[Sample]) -> list[tuple[int, int]]:
    """The flattened (sample index, modality) grid of present embeddings."""
    return [(si, int(m)) for si, s in enumerate(batch) for m in s.present()]


def build_pairs(batch: list[Sample], policy: str = "same_sample_authentic") -> PairSet:
    """Enumerate positives and per-anchor negatives for one batch.

    A batch with no authentic sample yields an empty positive set (the
    loss is then defined as zero).
    """
    if policy not in PAIR_POLICIES:
        raise ParameterError(f"unknown pair_policy {policy!r}")
    if len(batch) < 2:
        raise ParameterError(f"contrastive pairs need a batch of >= 2 samples, got {len(batch)}")
    entries = grid_entries(batch)
    n = len(entries)
    by_sample: dict[int, list[int]] = {}
    for idx, (si, _m) in enumerate(entries):
        by_sample.setdefault(si, []).append(idx)

    positives: list[tuple[int, int]] = []
    for si, s in enumerate(batch):
        if s.label != 0:
            continue
        own = by_sample[si]
        positives.extend((i, j) for i in own for j in own if i != j)
    if policy == "supervised_label":
        for modality in range(3):
            same_mod = [
                idx
                for idx, (si, m) in enumerate(entries)
                if m == modality and batch[si].label == 0
            ]
            positives.extend(
                (i, j)
                for i in same_mod
                for j in same_mod
                if i != j and entries[i][0] != entries[j][0]
            )

    negatives: list[list[int]] = []
    for idx, (si, _m) in enumerate(entries):
        negs = [k for k, (sk, _mk) in enumerate(entries) if sk != si]
        if batch[si].label == 1:
            negs.extend(k for k in by_sample[si] if k != idx)
        negatives.append(sorted(negs))

    if not positives:
        counters.bump("contrastive.batch_without_positives")
    pairs = PairSet(positives=positives, negatives=negatives, n_items=n)
    pairs.validate()
    return pairs


def similarity_matrix(embeddings: Tensor) -> Tensor:
    """Pairwise cosine similarities of the rows of a (n, d) tensor."""
    norms = np.sqrt((embeddings.data * embeddings.data).sum(axis=-1))
    if np.any(norms < 1e-300):
        raise ParameterError("cosine similarity is undefined for a zero vector")
    unit = l2_normalize_rows(embeddings)
    return matmul(unit, swap_last_axes(unit))


def contrastive_loss_from_similarities(
    sims: Tensor, pairs: PairSet, cfg: ContrastiveConfig
) -> Tensor:
    """Loss from a precomputed similarity matrix (rows/cols = grid indices)."""
    cfg.validate()
    if not pairs.positives:
        return Tensor(0.0)
    pairs.validate()
    logits = div(sims, Tensor(cfg.tau))
    rows = np.array([i for i, _ in pairs.positives], dtype=np.intp)
    cols = np.array([j for _, j in pairs.positives], dtype=np.intp)
    pos = take_pairs(logits, rows, cols)
    mask = np.full((len(pairs.positives), pairs.n_items), -np.inf)
    for p, (i, j) in enumerate(pairs.positives):
        mask[p, pairs.negatives[i]] = 0.0
        if cfg.denominator_mode == "standard":
            mask[p, j] = 0.0
    denom = logsumexp_rows(index_rows(logits, rows), additive_mask=mask)
    return mean(sub(denom, pos))


def contrastive_loss(embeddings: Tensor, pairs: PairSet, cfg: ContrastiveConfig) -> Tensor:
    """Alignment loss over batch embeddings (n, d), differentiable throughout."""
    cfg.validate()
    if not pairs.positives:
        return Tensor(0.0)
    return contrastive_loss_from_similarities(similarity_matrix(embeddings), pairs, cfg)
