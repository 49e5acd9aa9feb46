import numpy as np
import pytest

from crossmodal import counters
from crossmodal.dataio import MODALITIES, ModalityKind
from crossmodal.errors import ParameterError, ShapeError
from crossmodal.projection import ProjectionHead, init_heads, project
from crossmodal.tensor import Tensor


def _head(W, b, normalize=True, modality=ModalityKind.AUDIO):
    return ProjectionHead(
        modality=modality,
        W=Tensor(np.asarray(W, dtype=float), requires_grad=True),
        b=Tensor(np.asarray(b, dtype=float), requires_grad=True),
        normalize_output=normalize,
    )


class TestProject:
    def test_zero_weights_unit_bias(self):
        head = _head(np.zeros((3, 4)), [1.0, 0.0, 0.0])
        out = project(head, np.array([5.0, -2.0, 0.5, 9.0]))
        assert np.allclose(out.data, [1.0, 0.0, 0.0], atol=1e-12)

    def test_identity_without_normalization(self):
        head = _head(np.eye(4), np.zeros(4), normalize=False)
        z = np.array([3.0, -1.0, 0.0, 2.0])
        assert np.allclose(project(head, z).data, z, atol=1e-14)

    def test_normalized_output_has_unit_norm(self):
        gen = np.random.default_rng(0)
        head = _head(gen.standard_normal((6, 10)), gen.standard_normal(6))
        batch = gen.standard_normal((32, 10))
        out = project(head, batch).data
        assert np.max(np.abs(np.linalg.norm(out, axis=-1) - 1.0)) < 1e-9

    def test_dim_mismatch_names_modality(self):
        head = _head(np.zeros((3, 4)), np.zeros(3), modality=ModalityKind.VIDEO)
        with pytest.raises(ShapeError, match="VIDEO"):
            project(head, np.zeros(5))

    def test_zero_vector_guard_falls_back_to_e1(self):
        head = _head(np.zeros((3, 4)), np.zeros(3))
        out = project(head, np.ones(4))
        assert np.allclose(out.data, [1.0, 0.0, 0.0])
        assert counters.WARNINGS["projection.zero_norm_fallback"] == 1

    def test_cosine_equals_dot_after_normalization(self):
        gen = np.random.default_rng(1)
        head = _head(gen.standard_normal((5, 7)), np.zeros(5))
        a = project(head, gen.standard_normal(7)).data
        b = project(head, gen.standard_normal(7)).data
        cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        assert cos == pytest.approx(float(a @ b), abs=1e-9)


class TestInitHeads:
    def test_deterministic(self):
        h1 = init_heads((8, 9, 10), 4, seed=7)
        h2 = init_heads((8, 9, 10), 4, seed=7)
        for m in MODALITIES:
            assert np.array_equal(h1[m].W.data, h2[m].W.data)

    def test_bounds_and_zero_bias(self):
        heads = init_heads((40, 50, 60), 16, seed=3)
        for m in MODALITIES:
            bound = np.sqrt(6.0 / (heads[m].d_m + 16))
            assert np.max(np.abs(heads[m].W.data)) <= bound
            assert np.array_equal(heads[m].b.data, np.zeros(16))

    def test_mean_near_zero(self):
        # uniform(-b, b) over >= 1e4 entries: mean within 3 sigma of zero
        heads = init_heads((200, 200, 200), 64, seed=11)
        for m in MODALITIES:
            w = heads[m].W.data
            bound = np.sqrt(6.0 / (w.shape[1] + w.shape[0]))
            sigma = bound / np.sqrt(3.0) / np.sqrt(w.size)
            assert abs(w.mean()) < 3 * sigma

    def test_common_output_dim(self):
        heads = init_heads((8, 16, 24), 6, seed=0)
        gen = np.random.default_rng(0)
        outs = [
            project(heads[m], gen.standard_normal(heads[m].d_m)).data.shape
            for m in MODALITIES
        ]
        assert outs == [(6,), (6,), (6,)]

    def test_small_shared_dim_rejected(self):
        with pytest.raises(ParameterError):
            init_heads((4, 4, 4), 1, seed=0)
