import math

import numpy as np
import pytest

from conftest import finite_difference_grads, max_rel_error
from crossmodal.errors import ParameterError, ShapeError
from crossmodal.fusion import (
    ClassifierHead,
    FusionStrategy,
    bce_loss,
    classify,
    fuse,
    init_classifier,
    total_loss,
)
from crossmodal.tensor import Tensor, backward


def _tokens(batch=1, d=4, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((batch, 3, d)))


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


class TestFuse:
    def test_concat_length_and_order(self):
        t = np.arange(96, dtype=float).reshape(1, 3, 32)
        out = fuse(Tensor(t), FusionStrategy("concat")).data
        assert out.shape == (1, 96)
        assert np.array_equal(out[0], t[0].reshape(-1))  # a then v then av

    def test_concat_preserves_coordinates(self):
        t = _tokens(batch=4, d=8, seed=1)
        out = fuse(t, FusionStrategy("concat")).data
        assert np.array_equal(out.reshape(4, 3, 8), t.data)

    def test_mean_of_identical_tokens(self):
        x = np.array([1.5, -2.0, 4.25, 0.5])
        t = Tensor(np.tile(x, (1, 3, 1)).reshape(1, 3, 4))
        out = fuse(t, FusionStrategy("mean")).data[0]
        assert np.allclose(out, x, atol=1e-12)

    def test_weighted_degenerate_selects_modality(self):
        t = _tokens(batch=2, d=4, seed=2)
        out = fuse(t, FusionStrategy("weighted", (1.0, 0.0, 0.0))).data
        assert np.array_equal(out, t.data[:, 0, :])

    def test_mean_and_weighted_stay_in_convex_hull(self):
        t = _tokens(batch=3, d=5, seed=3)
        lo, hi = t.data.min(axis=1), t.data.max(axis=1)
        for strat in (FusionStrategy("mean"), FusionStrategy("weighted", (0.2, 0.3, 0.5))):
            out = fuse(t, strat).data
            assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_invalid_weights_rejected(self):
        with pytest.raises(ParameterError):
            FusionStrategy("weighted", (0.5, 0.5, 0.5)).validate()
        with pytest.raises(ParameterError):
            FusionStrategy("weighted", (-0.5, 1.0, 0.5)).validate()
        with pytest.raises(ParameterError):
            FusionStrategy("nope").validate()


class TestClassify:
    def test_zero_head_outputs_half(self):
        head = ClassifierHead(
            w1=Tensor(np.zeros((64, 12))),
            b1=Tensor(np.zeros(64)),
            w2=Tensor(np.zeros((1, 64))),
            b2=Tensor(np.zeros(1)),
        )
        pred = classify(head, Tensor(np.ones(12)))
        assert float(pred.prob.data) == 0.5

    def test_large_output_bias_saturates_to_one(self):
        head = ClassifierHead(
            w1=Tensor(np.zeros((64, 4))),
            b1=Tensor(np.zeros(64)),
            w2=Tensor(np.zeros((1, 64))),
            b2=Tensor(np.array([1e4])),
        )
        pred = classify(head, Tensor(np.zeros(4)))
        assert float(pred.prob.data) == pytest.approx(1.0, abs=1e-12)

    def test_random_head_stays_in_open_interval(self):
        head = init_classifier(24, seed=0)
        gen = np.random.default_rng(0)
        pred = classify(head, Tensor(gen.standard_normal((50, 24))))
        assert np.all(pred.prob.data > 0.0) and np.all(pred.prob.data < 1.0)

    def test_monotone_in_logit(self):
        head = init_classifier(8, seed=1)
        x = Tensor(np.random.default_rng(1).standard_normal(8))
        pred = classify(head, x)
        bumped = ClassifierHead(head.w1, head.b1, head.w2, Tensor(head.b2.data + 1.0))
        pred_up = classify(bumped, x)
        assert float(pred_up.logit.data) > float(pred.logit.data)
        assert float(pred_up.prob.data) > float(pred.prob.data)

    def test_dim_mismatch_rejected(self):
        head = init_classifier(8, seed=2)
        with pytest.raises(ShapeError):
            classify(head, Tensor(np.zeros(9)))

    def test_eval_mode_has_no_dropout(self):
        head = init_classifier(8, seed=3)
        x = Tensor(np.random.default_rng(2).standard_normal((4, 8)))
        a = classify(head, x, train_mode=False, dropout_p=0.5).prob.data
        b = classify(head, x, train_mode=False, dropout_p=0.5).prob.data
        assert np.array_equal(a, b)


class TestBce:
    def test_half_probability_gives_log_two(self):
        for y in (0.0, 1.0):
            loss = bce_loss(Tensor(0.0), np.array(y))
            assert float(loss.data) == pytest.approx(math.log(2.0), abs=1e-12)
            assert float(loss.data) == pytest.approx(0.69315, abs=1e-5)

    def test_confident_correct_approaches_zero(self):
        loss = bce_loss(Tensor(_logit(1 - 1e-12)), np.array(1.0))
        assert float(loss.data) == pytest.approx(0.0, abs=1e-9)

    def test_point_nine_value(self):
        loss = bce_loss(Tensor(_logit(0.9)), np.array(1.0))
        assert float(loss.data) == pytest.approx(-math.log(0.9), abs=1e-9)
        assert float(loss.data) == pytest.approx(0.10536, abs=1e-5)

    def test_batch_mean(self):
        logits = Tensor(np.array([_logit(0.9), _logit(0.8)]))
        loss = bce_loss(logits, np.array([1.0, 0.0]))
        want = (-math.log(0.9) - math.log(0.2)) / 2.0
        assert float(loss.data) == pytest.approx(want, abs=1e-9)

    def test_extreme_logits_stable(self):
        loss = bce_loss(Tensor(np.array([1e4, -1e4])), np.array([0.0, 1.0]))
        assert np.isfinite(loss.data)

    def test_bad_labels_rejected(self):
        with pytest.raises(ParameterError):
            bce_loss(Tensor(np.array([0.0])), np.array([2.0]))

    def test_gradient_matches_finite_differences(self):
        gen = np.random.default_rng(4)
        logits0 = gen.standard_normal(6)
        y = (gen.random(6) > 0.5).astype(float)

        def run(arrays):
            return float(bce_loss(Tensor(arrays[0], requires_grad=True), y).data)

        t = Tensor(logits0, requires_grad=True)
        backward(bce_loss(t, y))
        numeric = finite_difference_grads(run, [logits0])
        assert max_rel_error([t.grad], numeric) < 1e-5


class TestTotalLoss:
    def test_lambda_zero_is_classification_exactly(self):
        lc, lcls = Tensor(0.4), Tensor(0.6)
        assert float(total_loss(lc, lcls, 0.0).data) == 0.6

    def test_lambda_one_is_contrastive_exactly(self):
        lc, lcls = Tensor(0.4), Tensor(0.6)
        assert float(total_loss(lc, lcls, 1.0).data) == 0.4

    def test_midpoint(self):
        assert float(total_loss(Tensor(0.4), Tensor(0.6), 0.5).data) == pytest.approx(0.5, abs=1e-12)

    def test_out_of_range_rejected(self):
        with pytest.raises(ParameterError):
            total_loss(Tensor(0.1), Tensor(0.1), 1.5)
