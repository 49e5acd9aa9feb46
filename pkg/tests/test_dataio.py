import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossmodal.crc64 import crc64
from crossmodal.dataio import (
    MODALITIES,
    EmbeddingBundle,
    ModalityKind,
    Sample,
    SynthConfig,
    batch_iter,
    bundle_from_bytes,
    bundle_to_bytes,
    mixing_matrices,
    read_bundle,
    split,
    synth_generate,
    write_bundle,
)
from crossmodal.errors import FormatError, ParameterError, StratificationError


def _f32(values):
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def _mixed_bundle():
    return EmbeddingBundle(
        dims=(2, 3, 4),
        samples=[
            Sample(id="a", label=0, z_a=_f32([1.5, -2.25]), z_v=_f32([0.0, 1.0, 2.0])),
            Sample(id="b", label=1, z_av=_f32([4.0, 3.0, 2.0, 1.0])),
            Sample(
                id="c",
                label=0,
                z_a=_f32([0.125, 0.5]),
                z_v=_f32([9.0, 8.0, 7.0]),
                z_av=_f32([-1.0, -2.0, -3.0, -4.0]),
            ),
        ],
    )


class TestBundleFormat:
    def test_empty_bundle_roundtrips(self):
        b = EmbeddingBundle(dims=(2, 3, 4), samples=[])
        assert bundle_from_bytes(bundle_to_bytes(b)) == b

    def test_mixed_bundle_roundtrips_bit_exactly(self):
        b = _mixed_bundle()
        raw = bundle_to_bytes(b)
        again = bundle_to_bytes(bundle_from_bytes(raw))
        assert raw == again  # byte-compare oracle
        assert bundle_from_bytes(raw) == b

    def test_file_roundtrip(self, tmp_path):
        b = _mixed_bundle()
        path = tmp_path / "x.ceb"
        write_bundle(b, path)
        assert read_bundle(path) == b

    def test_bad_magic_reported_at_offset_zero(self):
        raw = bytearray(bundle_to_bytes(_mixed_bundle()))
        raw[0:4] = b"XEB1"
        with pytest.raises(FormatError, match="offset 0"):
            bundle_from_bytes(bytes(raw))

    def test_crc_flip_detected_at_trailer(self):
        raw = bytearray(bundle_to_bytes(_mixed_bundle()))
        raw[-1] ^= 0xFF
        with pytest.raises(FormatError, match=f"offset {len(raw) - 8}"):
            bundle_from_bytes(bytes(raw))

    def test_truncation_detected(self):
        raw = bundle_to_bytes(_mixed_bundle())
        with pytest.raises(FormatError):
            bundle_from_bytes(raw[: len(raw) // 2])

    def test_corrupt_payload_with_fixed_crc_reports_field(self):
        # flip the label byte to 7 and repair the CRC so parsing reaches it
        b = EmbeddingBundle(dims=(1, 1, 1), samples=[Sample(id="s", label=0, z_a=_f32([1.0]))])
        raw = bytearray(bundle_to_bytes(b)[:-8])
        label_offset = 4 + 1 + 4 + 12 + 2 + 1
        assert raw[label_offset] == 0
        raw[label_offset] = 7
        raw += struct.pack("<Q", crc64(bytes(raw)))
        with pytest.raises(FormatError, match="label"):
            bundle_from_bytes(bytes(raw))

    def test_header_layout_is_as_documented(self):
        raw = bundle_to_bytes(EmbeddingBundle(dims=(5, 6, 7), samples=[]))
        assert raw[0:4] == b"CEB1"
        assert raw[4] == 1
        assert struct.unpack("<I", raw[5:9])[0] == 0
        assert struct.unpack("<III", raw[9:21]) == (5, 6, 7)
        assert struct.unpack("<Q", raw[-8:])[0] == crc64(raw[:-8])

    def test_validation_rejects_duplicate_ids(self):
        b = EmbeddingBundle(
            dims=(1, 1, 1),
            samples=[
                Sample(id="x", label=0, z_a=_f32([1.0])),
                Sample(id="x", label=1, z_a=_f32([2.0])),
            ],
        )
        with pytest.raises(ParameterError, match="duplicate"):
            bundle_to_bytes(b)

    def test_validation_rejects_dim_mismatch(self):
        b = EmbeddingBundle(dims=(2, 1, 1), samples=[Sample(id="x", label=0, z_a=_f32([1.0]))])
        with pytest.raises(ParameterError, match="AUDIO"):
            bundle_to_bytes(b)


@st.composite
def bundles(draw):
    dims = tuple(draw(st.integers(min_value=1, max_value=5)) for _ in range(3))
    n = draw(st.integers(min_value=0, max_value=6))
    samples = []
    for i in range(n):
        present = draw(st.lists(st.sampled_from(list(MODALITIES)), min_size=1, max_size=3, unique=True))
        kwargs = {}
        for m in present:
            values = draw(
                st.lists(
                    st.floats(
                        min_value=-1e6, max_value=1e6, allow_nan=False, width=32
                    ),
                    min_size=dims[m],
                    max_size=dims[m],
                )
            )
            kwargs[{"AUDIO": "z_a", "VIDEO": "z_v", "AUDIOVISUAL": "z_av"}[m.name]] = _f32(values)
        samples.append(Sample(id=f"s{i}", label=draw(st.sampled_from([0, 1])), **kwargs))
    return EmbeddingBundle(dims=dims, samples=samples)


@settings(max_examples=60, deadline=None)
@given(bundles())
def test_roundtrip_property(bundle):
    raw = bundle_to_bytes(bundle)
    parsed = bundle_from_bytes(raw)
    assert parsed == bundle
    assert bundle_to_bytes(parsed) == raw


class TestSynth:
    def test_counts_and_ids(self):
        b = synth_generate(SynthConfig(n_real=1, n_fake=1, seed=0))
        assert len(b) == 2
        assert {s.id for s in b.samples} == {"real-00000", "fake-00000"}
        assert sorted(s.label for s in b.samples) == [0, 1]

    def test_zero_count_rejected(self):
        with pytest.raises(ParameterError):
            synth_generate(SynthConfig(n_real=0, n_fake=1))

    def test_latent_dim_bounded_by_dims(self):
        with pytest.raises(ParameterError, match="latent_dim"):
            SynthConfig(latent_dim=100, dims=(8, 8, 8)).validate()

    def test_deterministic_per_seed(self):
        a = bundle_to_bytes(synth_generate(SynthConfig(n_real=5, n_fake=5, seed=9)))
        b = bundle_to_bytes(synth_generate(SynthConfig(n_real=5, n_fake=5, seed=9)))
        assert a == b

    def test_different_seeds_differ(self):
        a = bundle_to_bytes(synth_generate(SynthConfig(n_real=5, n_fake=5, seed=1)))
        b = bundle_to_bytes(synth_generate(SynthConfig(n_real=5, n_fake=5, seed=2)))
        assert a != b

    def test_hard_mode_correlation_structure(self):
        # recover latents through the pseudo-inverse of each mixing map:
        # matched directions correlate ~1 for authentic, ~0 for manipulated
        cfg = SynthConfig(n_real=400, n_fake=400, mode="hard", seed=3)
        bundle = synth_generate(cfg)
        mixing = mixing_matrices(cfg)
        pinv = {m: np.linalg.pinv(mixing[m]) for m in MODALITIES}

        def mean_matched_correlation(label):
            u_a, u_v = [], []
            for s in bundle.samples:
                if s.label != label:
                    continue
                u_a.append(pinv[ModalityKind.AUDIO] @ s.z_a)
                u_v.append(pinv[ModalityKind.VIDEO] @ s.z_v)
            u_a, u_v = np.array(u_a), np.array(u_v)
            corrs = [
                np.corrcoef(u_a[:, j], u_v[:, j])[0, 1] for j in range(cfg.latent_dim)
            ]
            return float(np.mean(corrs))

        real_corr = mean_matched_correlation(0)
        fake_corr = mean_matched_correlation(1)
        assert real_corr > 0.8
        assert abs(fake_corr) < 0.2
        assert real_corr - fake_corr > 0.5

    def test_hard_mode_marginals_uninformative(self):
        # per-modality logistic probe stays near chance on >= 2000 samples
        from sklearn.linear_model import LogisticRegression
        from sklearn.metrics import roc_auc_score

        bundle = synth_generate(SynthConfig(n_real=1000, n_fake=1000, mode="hard", seed=5))
        y = bundle.labels()
        for attr in ("z_a", "z_v", "z_av"):
            X = np.array([getattr(s, attr) for s in bundle.samples])
            half = len(X) // 2
            order = np.random.default_rng(0).permutation(len(X))
            tr, te = order[:half], order[half:]
            probe = LogisticRegression(max_iter=2000).fit(X[tr], y[tr])
            auc_val = roc_auc_score(y[te], probe.predict_proba(X[te])[:, 1])
            assert 0.40 <= auc_val <= 0.60, f"{attr} probe AUC {auc_val}"

    def test_easy_mode_av_marginal_is_informative(self):
        bundle = synth_generate(SynthConfig(n_real=200, n_fake=200, mode="easy", seed=6))
        means = {
            label: np.mean([s.z_av for s in bundle.samples if s.label == label])
            for label in (0, 1)
        }
        assert means[1] - means[0] > 0.5

    def test_provenance_records_mixing(self):
        b = synth_generate(SynthConfig(n_real=2, n_fake=2, seed=1))
        assert "mixing_crc64" in b.provenance and "hard" not in b.provenance


class TestSplit:
    def test_stratified_counts(self):
        b = synth_generate(SynthConfig(n_real=10, n_fake=10, seed=0))
        tr, ev = split(b, 0.5, seed=1)
        assert len(tr) == 10 and len(ev) == 10
        assert (tr.labels() == 0).sum() == 5 and (tr.labels() == 1).sum() == 5
        assert (ev.labels() == 0).sum() == 5 and (ev.labels() == 1).sum() == 5

    def test_disjoint_union(self):
        b = synth_generate(SynthConfig(n_real=7, n_fake=9, seed=0))
        tr, ev = split(b, 0.3, seed=2)
        ids = {s.id for s in tr.samples} | {s.id for s in ev.samples}
        assert len(ids) == len(b)
        assert {s.id for s in tr.samples}.isdisjoint({s.id for s in ev.samples})

    def test_same_seed_same_split(self):
        b = synth_generate(SynthConfig(n_real=50, n_fake=50, seed=0))
        ev1 = {s.id for s in split(b, 0.2, seed=3)[1].samples}
        ev2 = {s.id for s in split(b, 0.2, seed=3)[1].samples}
        assert ev1 == ev2

    def test_different_seed_different_membership(self):
        b = synth_generate(SynthConfig(n_real=50, n_fake=50, seed=0))
        ev1 = {s.id for s in split(b, 0.5, seed=4)[1].samples}
        ev2 = {s.id for s in split(b, 0.5, seed=5)[1].samples}
        assert ev1 != ev2

    def test_single_class_rejected(self):
        b = EmbeddingBundle(
            dims=(1, 1, 1),
            samples=[Sample(id=f"s{i}", label=0, z_a=_f32([float(i)])) for i in range(4)],
        )
        with pytest.raises(StratificationError):
            split(b, 0.5, seed=0)


class TestBatchIter:
    def test_short_final_batch_kept(self):
        b = synth_generate(SynthConfig(n_real=4, n_fake=3, seed=0))
        batches = batch_iter(b, 3, seed=0, epoch=0)
        assert [len(batch) for batch in batches] == [3, 3, 1]

    def test_every_sample_exactly_once(self):
        b = synth_generate(SynthConfig(n_real=6, n_fake=5, seed=0))
        batches = batch_iter(b, 4, seed=0, epoch=0)
        ids = [s.id for batch in batches for s in batch]
        assert sorted(ids) == sorted(s.id for s in b.samples)

    def test_epochs_shuffle_differently(self):
        b = synth_generate(SynthConfig(n_real=20, n_fake=20, seed=0))
        ids0 = [s.id for batch in batch_iter(b, 8, seed=1, epoch=0) for s in batch]
        ids1 = [s.id for batch in batch_iter(b, 8, seed=1, epoch=1) for s in batch]
        assert ids0 != ids1

    def test_batch_size_one_rejected(self):
        b = synth_generate(SynthConfig(n_real=2, n_fake=2, seed=0))
        with pytest.raises(ParameterError):
            batch_iter(b, 1, seed=0, epoch=0)
