"""Embedding bundles: the CEB v1 binary format, synthesis, splitting, batching.

A bundle is a list of samples, each carrying a binary label and up to
three modality embedding vectors (audio, video, audiovisual). CEB v1 is
the little-endian interchange layout (values stored as float32, promoted
to float64 in memory; the in-memory arrays are kept float32-representable
so write/read round-trips are bit-exact). The `provenance` field is
in-memory metadata only: CEB v1 has no slot for it, so it is excluded
from bundle equality.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .crc64 import crc64, crc64_hex
from .errors import FormatError, ParameterError, StratificationError
from .rng import derive_seed, generator

MAGIC = b"CEB1"
VERSION = 1


class ModalityKind(IntEnum):
    AUDIO = 0
    VIDEO = 1
    AUDIOVISUAL = 2


MODALITIES = (ModalityKind.AUDIO, ModalityKind.VIDEO, ModalityKind.AUDIOVISUAL)
_FIELD = {ModalityKind.AUDIO: "z_a", ModalityKind.VIDEO: "z_v", ModalityKind.AUDIOVISUAL: "z_av"}


def _f32_exact(arr: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 and promote back, so files round-trip."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


@dataclass
class Sample:
    id: str
    label: int
    z_a: np.ndarray | None = None
    z_v: np.ndarray | None = None
    z_av: np.ndarray | None = None

    def embedding(self, m: ModalityKind) -> np.ndarray | None:
        return getattr(self, _FIELD[m])

    def present(self) -> tuple[ModalityKind, ...]:
        return tuple(m for m in MODALITIES if self.embedding(m) is not None)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        if self.id != other.id or self.label != other.label:
            return False
        for m in MODALITIES:
            a, b = self.embedding(m), other.embedding(m)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass(eq=False)
class EmbeddingBundle:
    dims: tuple[int, int, int]
    samples: list[Sample] = field(default_factory=list)
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def __eq__(self, other) -> bool:
        # provenance is not persisted by CEB v1, so it does not take part
        if not isinstance(other, EmbeddingBundle):
            return NotImplemented
        return tuple(self.dims) == tuple(other.dims) and self.samples == other.samples

    def validate(self) -> None:
        if len(self.dims) != 3:
            raise ParameterError(f"dims must have three entries, got {self.dims}")
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise ParameterError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if s.label not in (0, 1):
                raise ParameterError(f"sample {s.id!r}: label must be 0 or 1, got {s.label}")
            if not s.present():
                raise ParameterError(f"sample {s.id!r} has no modality embeddings")
            for m in MODALITIES:
                z = s.embedding(m)
                if z is None:
                    continue
                d = self.dims[m]
                if d <= 0:
                    raise ParameterError(
                        f"sample {s.id!r} carries {m.name} but header dim is {d}"
                    )
                if z.ndim != 1 or z.shape[0] != d:
                    raise ParameterError(
                        f"sample {s.id!r}: {m.name} embedding has shape {z.shape}, expected ({d},)"
                    )
                if not np.all(np.isfinite(z)):
                    raise ParameterError(f"sample {s.id!r}: {m.name} embedding is not finite")


# ---------------------------------------------------------------------------
# CEB v1 serialization


def bundle_to_bytes(bundle: EmbeddingBundle) -> bytes:
    bundle.validate()
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(bundle.samples))]
    parts.append(struct.pack("<III", *bundle.dims))
    for s in bundle.samples:
        id_bytes = s.id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise ParameterError(f"sample id too long ({len(id_bytes)} bytes)")
        mask = 0
        for m in MODALITIES:
            if s.embedding(m) is not None:
                mask |= 1 << int(m)
        parts.append(struct.pack("<H", len(id_bytes)))
        parts.append(id_bytes)
        parts.append(struct.pack("<BB", s.label, mask))
        for m in MODALITIES:
            z = s.embedding(m)
            if z is not None:
                parts.append(np.asarray(z, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", crc64(body))


def write_bundle(bundle: EmbeddingBundle, path: str | Path) -> None:
    Path(path).write_bytes(bundle_to_bytes(bundle))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", offset=self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def bundle_from_bytes(buf: bytes) -> EmbeddingBundle:
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(buf) < 4 + 1 + 4 + 12 + 8:
        raise FormatError("file too short for header and CRC trailer", offset=len(buf))
    body, trailer = buf[:-8], buf[-8:]
    (stored_crc,) = struct.unpack("<Q", trailer)
    actual = crc64(body)
    if stored_crc != actual:
        raise FormatError(
            f"CRC mismatch: stored {stored_crc:016x}, computed {actual:016x}",
            offset=len(body),
        )
    r = _Reader(body)
    r.take(4, "magic")
    (version,) = struct.unpack("<B", r.take(1, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    (count,) = struct.unpack("<I", r.take(4, "sample count"))
    dims = struct.unpack("<III", r.take(12, "modality dims"))
    samples: list[Sample] = []
    for i in range(count):
        (id_len,) = struct.unpack("<H", r.take(2, f"sample {i} id length"))
        id_offset = r.pos
        try:
            sid = r.take(id_len, f"sample {i} id").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"sample {i} id is not valid UTF-8", offset=id_offset) from e
        label_offset = r.pos
        label, mask = struct.unpack("<BB", r.take(2, f"sample {i} label/mask"))
        if label not in (0, 1):
            raise FormatError(f"sample {sid!r}: label byte {label} not in {{0,1}}", offset=label_offset)
        if mask == 0 or mask > 0b111:
            raise FormatError(f"sample {sid!r}: invalid presence mask {mask:#04x}", offset=label_offset + 1)
        sample = Sample(id=sid, label=label)
        for m in MODALITIES:
            if not mask & (1 << int(m)):
                continue
            d = dims[m]
            if d == 0:
                raise FormatError(
                    f"sample {sid!r} carries {m.name} but header dim is 0", offset=9 + 4 * int(m)
                )
            raw = r.take(4 * d, f"sample {sid!r} {m.name} values")
            setattr(sample, _FIELD[m], np.frombuffer(raw, dtype="<f4").astype(np.float64))
        samples.append(sample)
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} unexpected trailing bytes", offset=r.pos)
    bundle = EmbeddingBundle(dims=(dims[0], dims[1], dims[2]), samples=samples)
    bundle.validate()
    return bundle


def read_bundle(path: str | Path) -> EmbeddingBundle:
    return bundle_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    n_real: int = 1000
    n_fake: int = 1000
    latent_dim: int = 16
    dims: tuple[int, int, int] = (64, 96, 80)
    noise_sigma: float = 0.3
    mode: str = "easy"  # easy: marginal shift on z_av; hard: broken cross-modal correlation
    fake_shift: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_real < 1 or self.n_fake < 1:
            raise ParameterError(
                f"need at least one sample per class, got n_real={self.n_real}, n_fake={self.n_fake}"
            )
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ParameterError(f"dims must be three positive sizes, got {self.dims}")
        if self.latent_dim < 1 or self.latent_dim > min(self.dims):
            raise ParameterError(
                f"latent_dim must be in [1, min(dims)={min(self.dims)}], got {self.latent_dim}"
            )
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.mode not in ("easy", "hard"):
            raise ParameterError(f"mode must be 'easy' or 'hard', got {self.mode!r}")


def mixing_matrices(config: SynthConfig) -> dict[ModalityKind, np.ndarray]:
    """The fixed per-modality (d_m x k) mixing maps, a pure function of the seed."""
    out = {}
    for m in MODALITIES:
        gen = generator(derive_seed(config.seed, f"synth-mixing:{m.name}"))
        out[m] = gen.standard_normal((config.dims[m], config.latent_dim)) / np.sqrt(config.latent_dim)
    return out


def synth_generate(config: SynthConfig) -> EmbeddingBundle:
    """Generate a synthetic bundle standing in for pretrained-extractor output.

    Authentic samples share one latent across modalities; manipulated
    samples either break that sharing (hard mode: identical marginals,
    zero cross-modal correlation) or keep it and shift z_av (easy mode:
    detectable from the z_av marginal alone).
    """
    config.validate()
    mixing = mixing_matrices(config)
    gen = generator(derive_seed(config.seed, "synth-samples"))
    k = config.latent_dim
    sigma = config.noise_sigma
    samples: list[Sample] = []

    def emit(label: int, idx: int) -> None:
        if label == 0 or config.mode == "easy":
            u = gen.standard_normal(k)
            latents = {m: u for m in MODALITIES}
        else:
            latents = {m: gen.standard_normal(k) for m in MODALITIES}
        vecs = {}
        for m in MODALITIES:
            z = mixing[m] @ latents[m] + sigma * gen.standard_normal(config.dims[m])
            if label == 1 and config.mode == "easy" and m is ModalityKind.AUDIOVISUAL:
                z = z + config.fake_shift
            vecs[m] = _f32_exact(z)
        prefix = "real" if label == 0 else "fake"
        samples.append(
            Sample(
                id=f"{prefix}-{idx:05d}",
                label=label,
                z_a=vecs[ModalityKind.AUDIO],
                z_v=vecs[ModalityKind.VIDEO],
                z_av=vecs[ModalityKind.AUDIOVISUAL],
            )
        )

    for i in range(config.n_real):
        emit(0, i)
    for i in range(config.n_fake):
        emit(1, i)

    provenance = json.dumps(
        {
            "generator": "synthetic",
            "mode": config.mode,
            "n_real": config.n_real,
            "n_fake": config.n_fake,
            "latent_dim": k,
            "dims": list(config.dims),
            "noise_sigma": sigma,
            "fake_shift": config.fake_shift if config.mode == "easy" else None,
            "seed": config.seed,
            "mixing_crc64": {m.name.lower(): crc64_hex(mixing[m].tobytes()) for m in MODALITIES},
        },
        sort_keys=True,
    )
    bundle = EmbeddingBundle(dims=tuple(config.dims), samples=samples, provenance=provenance)
    bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# splitting and batching


def split(
    bundle: EmbeddingBundle, eval_fraction: float, seed: int
) -> tuple[EmbeddingBundle, EmbeddingBundle]:
    """Label-stratified disjoint split into (train, eval), deterministic per seed."""
    if not 0.0 < eval_fraction < 1.0:
        raise ParameterError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    if len(bundle) < 2:
        raise ParameterError(f"need at least 2 samples to split, got {len(bundle)}")
    labels = bundle.labels()
    if len(set(labels.tolist())) < 2:
        raise StratificationError("cannot stratify a single-class bundle")
    eval_idx: set[int] = set()
    for label in (0, 1):
        idx = np.flatnonzero(labels == label)
        gen = generator(derive_seed(seed, f"split:label{label}"))
        idx = idx[gen.permutation(len(idx))]
        n_eval = int(round(eval_fraction * len(idx)))
        eval_idx.update(idx[:n_eval].tolist())
    train_samples = [s for i, s in enumerate(bundle.samples) if i not in eval_idx]
    eval_samples = [s for i, s in enumerate(bundle.samples) if i in eval_idx]
    return (
        EmbeddingBundle(dims=bundle.dims, samples=train_samples, provenance=bundle.provenance),
        EmbeddingBundle(dims=bundle.dims, samples=eval_samples, provenance=bundle.provenance),
    )


def batch_iter(
    bundle: EmbeddingBundle, batch_size: int, seed: int, epoch: int
) -> list[list[Sample]]:
    """Per-epoch shuffled batches; the final short batch is kept.

    batch_size >= 2 because the contrastive loss needs in-batch negatives.
    """
    if batch_size < 2:
        raise ParameterError(f"batch_size must be >= 2, got {batch_size}")
    order = generator(derive_seed(seed, f"shuffle:epoch{epoch}")).permutation(len(bundle))
    return [
        [bundle.samples[i] for i in order[start : start + batch_size]]
        for start in range(0, len(bundle), batch_size)
    ]
