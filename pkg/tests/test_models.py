import numpy as np
import pytest

from textmel.errors import ConfigInvalid, LengthMismatch, ShapeMismatch
from textmel.nn import Param, finite_diff_gradcheck
from textmel.nn.gradcheck import scalar_projection_loss
from textmel.models import (
    DurationModel,
    DurationModelConfig,
    MelModel,
    MelModelConfig,
    PitchModel,
    PitchModelConfig,
    batch_gaussian_weights,
    count_params,
    decode_durations,
    duration_loss,
    mel_loss,
    pitch_loss,
)
from textmel.text import Vocab

VOCAB_SIZE = len(Vocab.default())


class TestParameterCounts:
    def test_duration_model_full_scale(self):
        model = DurationModel(DurationModelConfig(vocab_size=VOCAB_SIZE))
        n = count_params(model)
        assert 2.3e6 * 0.85 <= n <= 2.3e6 * 1.15

    def test_mel_model_full_scale(self):
        model = MelModel(MelModelConfig(vocab_size=VOCAB_SIZE))
        n = count_params(model)
        assert 8.5e6 * 0.85 <= n <= 8.5e6 * 1.15

    def test_three_model_total(self):
        total = sum(count_params(m) for m in (
            DurationModel(DurationModelConfig(vocab_size=VOCAB_SIZE)),
            PitchModel(PitchModelConfig(vocab_size=VOCAB_SIZE)),
            MelModel(MelModelConfig(vocab_size=VOCAB_SIZE)),
        ))
        assert 13.2e6 * 0.85 <= total <= 13.2e6 * 1.15

    def test_pitch_trunk_matches_duration_trunk(self):
        dur = DurationModel(DurationModelConfig(vocab_size=VOCAB_SIZE))
        pitch = PitchModel(PitchModelConfig(vocab_size=VOCAB_SIZE))
        dur_trunk = sum(p.value.size for n, p in dur.named_params() if n.startswith("trunk."))
        pitch_trunk = sum(p.value.size for n, p in pitch.named_params() if n.startswith("trunk."))
        assert dur_trunk == pitch_trunk

    def test_classification_head_option(self):
        cfg = DurationModelConfig(vocab_size=VOCAB_SIZE, classification_classes=32)
        model = DurationModel(cfg)
        base = DurationModel(DurationModelConfig(vocab_size=VOCAB_SIZE))
        assert count_params(model) > count_params(base)

    def test_invalid_config(self):
        with pytest.raises(ConfigInvalid):
            DurationModel(DurationModelConfig(vocab_size=1))
        with pytest.raises(ConfigInvalid):
            DurationModel(DurationModelConfig(vocab_size=10, scale=0.0))


class TestDurationModel:
    def test_length_preserved(self):
        model = DurationModel(DurationModelConfig(vocab_size=12, scale=0.05))
        for n in (1, 5, 17):
            ids = np.zeros((2, n), dtype=np.int64)
            assert model.forward(ids).shape == (2, n)

    def test_seeded_build_bitwise_identical(self):
        a = DurationModel(DurationModelConfig(vocab_size=12, scale=0.05), seed=7)
        b = DurationModel(DurationModelConfig(vocab_size=12, scale=0.05), seed=7)
        for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            assert np.array_equal(pa.value, pb.value)

    def test_eval_forward_deterministic(self):
        model = DurationModel(DurationModelConfig(vocab_size=12, scale=0.05))
        ids = np.array([[0, 3, 0, 5, 0]])
        assert np.array_equal(model.forward(ids), model.forward(ids))


class TestPitchModel:
    def test_output_lengths_equal_duration_sum(self):
        model = PitchModel(PitchModelConfig(vocab_size=12, scale=0.05))
        durs = [np.array([1, 3, 0, 2, 1])]
        weights, mask = batch_gaussian_weights(durs)
        ids = np.array([[0, 3, 0, 5, 0]])
        p_nv, p_body = model.forward(ids, weights, mask)
        assert p_nv.shape == (1, 7)
        assert p_body.shape == (1, 7)


class TestMelModel:
    def test_output_shape_80_by_total_duration(self):
        model = MelModel(MelModelConfig(vocab_size=12, scale=0.02))
        durs = [np.array([2, 4, 1])]
        weights, mask = batch_gaussian_weights(durs)
        ids = np.array([[0, 3, 0]])
        pitch = np.zeros((1, 7))
        out = model.forward(ids, weights, pitch, mask)
        assert out.shape == (1, 80, 7)

    def test_zero_pitch_reduces_to_projection_bias(self):
        model = MelModel(MelModelConfig(vocab_size=12, scale=0.02))
        durs = [np.array([2, 2])]
        weights, _ = batch_gaussian_weights(durs)
        ids = np.array([[0, 3]])
        emb = model.embed.forward(ids)
        up = emb @ np.zeros(0) if False else None
        x_zero = model.frame_input(ids, weights, np.zeros((1, 4)))
        from textmel.nn import gaussian_upsample
        up = gaussian_upsample(emb, weights.astype(emb.dtype))
        np.testing.assert_allclose(
            x_zero, up + model.pitch_proj.bias.value[None, :, None], atol=1e-6)

    def test_no_nan_for_finite_inputs(self):
        model = MelModel(MelModelConfig(vocab_size=12, scale=0.02))
        durs = [np.array([3, 5, 2])]
        weights, mask = batch_gaussian_weights(durs)
        ids = np.array([[1, 3, 5]])
        pitch = np.random.default_rng(0).normal(size=(1, 10))
        out = model.forward(ids, weights, pitch, mask)
        assert np.all(np.isfinite(out))


class TestEndToEndGradients:
    # training mode (dropout 0): batch-norm uses batch statistics, which keeps
    # activations O(1) at depth; untrained running stats would let the spec's
    # small-weight init shrink eval activations geometrically with depth.

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_duration_model_gradcheck(self, seed):
        model = DurationModel(DurationModelConfig(vocab_size=8, scale=0.03, dropout=0.0),
                              seed=seed, dtype=np.float64)
        ids = np.array([[0, 3, 0, 5, 0, 2, 0], [0, 2, 0, 4, 0, 1, 0]])

        def closure():
            pred = model.forward(ids, training=True)
            loss, dpred = scalar_projection_loss(pred, seed=seed)
            model.backward(dpred)
            return loss

        def probe():
            pred = model.forward(ids, training=True)
            return scalar_projection_loss(pred, seed=seed)[0]

        params = [p for _, p in model.named_params()]
        assert finite_diff_gradcheck(closure, params, seed=seed,
                                     coords_per_param=2, loss_only=probe) < 1e-3

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_pitch_model_gradcheck(self, seed):
        model = PitchModel(PitchModelConfig(vocab_size=8, scale=0.03, dropout=0.0),
                           seed=seed, dtype=np.float64)
        weights, mask = batch_gaussian_weights([np.array([1, 2, 0, 2, 1]),
                                                np.array([0, 3, 1, 1, 1])])
        ids = np.array([[0, 3, 0, 5, 0], [0, 2, 0, 2, 0]])

        def closure():
            p_nv, p_body = model.forward(ids, weights, mask, training=True)
            l1, d1 = scalar_projection_loss(p_nv * mask, seed=seed)
            l2, d2 = scalar_projection_loss(p_body * mask, seed=seed + 1)
            model.backward(d1 * mask, d2 * mask)
            return l1 + l2

        def probe():
            p_nv, p_body = model.forward(ids, weights, mask, training=True)
            return (scalar_projection_loss(p_nv * mask, seed=seed)[0]
                    + scalar_projection_loss(p_body * mask, seed=seed + 1)[0])

        params = [p for _, p in model.named_params()]
        assert finite_diff_gradcheck(closure, params, seed=seed,
                                     coords_per_param=2, loss_only=probe) < 1e-3

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_mel_model_gradcheck(self, seed):
        model = MelModel(MelModelConfig(vocab_size=8, scale=0.01, dropout=0.0),
                         seed=seed, dtype=np.float64)
        weights, mask = batch_gaussian_weights([np.array([2, 2, 1])])
        ids = np.array([[0, 3, 0]])
        pitch = np.random.default_rng(seed).normal(size=(1, 5))

        def closure():
            out = model.forward(ids, weights, pitch, mask, training=True)
            loss, dout = scalar_projection_loss(out, seed=seed)
            model.backward(dout)
            return loss

        def probe():
            out = model.forward(ids, weights, pitch, mask, training=True)
            return scalar_projection_loss(out, seed=seed)[0]

        params = [p for _, p in model.named_params()]
        assert finite_diff_gradcheck(closure, params, seed=seed,
                                     coords_per_param=2, loss_only=probe) < 1e-3


class TestDurationLoss:
    def test_perfect_prediction(self):
        durs = np.array([[3, 0, 2]])
        pred = np.log1p(durs.astype(np.float64))
        loss, _ = duration_loss(pred, durs, np.ones((1, 3)))
        assert loss == 0.0

    def test_closed_form(self):
        loss, _ = duration_loss(np.zeros((1, 2)), np.array([[1, 0]]), np.ones((1, 2)))
        assert loss == pytest.approx(np.log(2) ** 2 / 2, abs=1e-9)

    def test_masked_positions_ignored(self):
        pred = np.array([[0.5, 99.0]])
        durs = np.array([[1, 7]])
        mask = np.array([[1.0, 0.0]])
        loss, grad = duration_loss(pred, durs, mask)
        ref, _ = duration_loss(pred[:, :1], durs[:, :1], mask[:, :1])
        assert loss == pytest.approx(ref)
        assert grad[0, 1] == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            duration_loss(np.zeros((1, 2)), np.zeros((1, 3)), np.ones((1, 2)))

    def test_decode_floors(self):
        pred = np.log1p(np.array([[0.2, 4.0, 0.1]]))
        blanks = np.array([[True, False, True]])
        decoded = decode_durations(pred, blanks)
        assert decoded.tolist() == [[0, 4, 0]]
        # non-blank floor keeps every grapheme alive even at tiny predictions
        decoded2 = decode_durations(np.full((1, 3), -5.0), np.array([[True, False, True]]))
        assert decoded2.tolist() == [[0, 1, 0]]

    def test_decode_shift_invariance_shape(self):
        # adding a constant c to log predictions multiplies pre-round durations
        pred = np.array([[1.0, 2.0]])
        shifted = pred + 0.3
        raw = np.expm1(pred)
        raw_shifted = np.expm1(shifted)
        ratio = (raw_shifted + 1) / (raw + 1)
        np.testing.assert_allclose(ratio, np.exp(0.3))


class TestPitchLoss:
    def test_perfect_predictions(self):
        f0 = np.array([[0.0, 200.0, 180.0]])
        mask = np.ones((1, 3))
        p_nv = np.array([[30.0, -30.0, -30.0]])  # saturated logits
        p_body = (f0 - 150.0) / 50.0
        loss, _, _ = pitch_loss(p_nv, p_body, f0, 150.0, 50.0, mask)
        assert loss < 1e-6

    def test_all_unvoiced_mse_term_zero(self):
        f0 = np.zeros((1, 4))
        mask = np.ones((1, 4))
        loss, _, d_body = pitch_loss(np.full((1, 4), 30.0), np.zeros((1, 4)),
                                     f0, 150.0, 50.0, mask)
        assert loss < 1e-6
        np.testing.assert_array_equal(d_body, np.zeros((1, 4)))

    def test_hand_computed_mixed_case(self):
        f0 = np.array([[0.0, 200.0]])
        mask = np.ones((1, 2))
        # probabilities 0.9 (non-voiced) and 0.1 -> logits
        p_nv = np.log(np.array([[0.9 / 0.1, 0.1 / 0.9]]))
        p_body = np.array([[0.0, 0.5]])
        loss, _, _ = pitch_loss(p_nv, p_body, f0, 150.0, 50.0, mask)
        bce = -(np.log(0.9) + np.log(0.9)) / 2
        mse = (0.5 - 1.0) ** 2
        assert loss == pytest.approx(bce + mse, abs=1e-6)

    def test_body_gradient_zero_when_unvoiced(self):
        f0 = np.array([[0.0, 0.0, 150.0]])
        mask = np.ones((1, 3))
        _, _, d_body = pitch_loss(np.zeros((1, 3)), np.ones((1, 3)), f0,
                                  150.0, 50.0, mask)
        assert d_body[0, 0] == 0.0 and d_body[0, 1] == 0.0
        assert d_body[0, 2] != 0.0


class TestMelLoss:
    def test_zero_when_equal(self):
        x = np.random.default_rng(0).normal(size=(1, 4, 5))
        loss, _ = mel_loss(x, x.copy(), np.ones((1, 5)))
        assert loss == 0.0

    def test_constant_offset(self):
        x = np.zeros((1, 4, 5))
        loss, _ = mel_loss(x + 0.3, x, np.ones((1, 5)))
        assert loss == pytest.approx(0.09)

    def test_mask_excludes_frames(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(1, 4, 6))
        b = rng.normal(size=(1, 4, 6))
        mask = np.array([[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]])
        b2 = b.copy()
        b2[:, :, 3:] += 100.0
        l1, _ = mel_loss(a, b, mask)
        l2, _ = mel_loss(a, b2, mask)
        assert l1 == pytest.approx(l2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mel_loss(np.zeros((1, 4, 5)), np.zeros((1, 4, 6)), np.ones((1, 5)))
