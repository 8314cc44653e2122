import numpy as np
import pytest

from textmel.errors import BadSchedule, EmptyExpansion, LengthMismatch, NonFinite
from textmel.nn import (
    Adam,
    BatchNorm1d,
    DepthwiseConv1d,
    Dropout,
    Embedding,
    Param,
    PointwiseConv1d,
    ResidualBlock,
    SubBlock,
    clip_global_norm,
    cosine_warmup_lr,
    finite_diff_gradcheck,
    gaussian_upsample,
    gaussian_upsample_backward,
    gaussian_weights,
)
from textmel.nn.gradcheck import scalar_projection_loss


def rng64(seed=0):
    return np.random.default_rng(seed)


def layer_closure(forward, backward, x_param, extra_params, seed=0):
    """Scalarized loss closure over a layer; checks input and param grads."""

    def loss_and_backward():
        y = forward(x_param.value)
        loss, dy = scalar_projection_loss(y, seed=seed)
        dx = backward(dy)
        if dx is not None:
            x_param.grad += dx
        return loss

    return loss_and_backward


class TestSubBlockForward:
    def test_identity_composition(self):
        # centered-delta depthwise + identity pointwise + neutral BN (eval) = relu
        rng = rng64(0)
        sb = SubBlock(3, 3, 3, dropout=0.5, rng=rng, dtype=np.float64)
        sb.depthwise.weight.value[...] = 0.0
        sb.depthwise.weight.value[:, 1] = 1.0
        sb.pointwise.weight.value[...] = np.eye(3)
        x = rng.normal(size=(2, 3, 7))
        out = sb.forward(x, training=False)
        expected = np.maximum(x / np.sqrt(1.0 + sb.bn.eps), 0.0)  # running var starts at 1
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_zero_input_zero_output(self):
        sb = SubBlock(2, 4, 5, dropout=0.0, rng=rng64(1), dtype=np.float64)
        out = sb.forward(np.zeros((1, 2, 6)), training=False)
        np.testing.assert_array_equal(out, np.zeros((1, 4, 6)))

    def test_time_length_preserved(self):
        sb = SubBlock(3, 5, 9, dropout=0.1, rng=rng64(2))
        for t in (1, 4, 33):
            x = rng64(3).normal(size=(2, 3, t)).astype(np.float32)
            assert sb.forward(x, training=False).shape == (2, 5, t)

    def test_train_mode_deterministic_with_seed(self):
        sb = SubBlock(3, 4, 3, dropout=0.3, rng=rng64(4))
        x = rng64(5).normal(size=(2, 3, 8)).astype(np.float32)
        a = sb.forward(x.copy(), training=True, rng=np.random.default_rng(99))
        sb.bn.running_mean[...] = 0.0
        sb.bn.running_var[...] = 1.0
        b = sb.forward(x.copy(), training=True, rng=np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_depthwise(self, seed):
        rng = rng64(seed)
        layer = DepthwiseConv1d(3, 5, rng, dtype=np.float64)
        x = Param(rng.normal(size=(2, 3, 6)))
        closure = layer_closure(layer.forward, layer.backward, x,
                                [layer.weight], seed=seed)
        assert finite_diff_gradcheck(closure, [x, layer.weight], seed=seed) < 1e-6

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_pointwise_with_bias(self, seed):
        rng = rng64(seed + 10)
        layer = PointwiseConv1d(3, 4, rng, dtype=np.float64, bias=True)
        x = Param(rng.normal(size=(2, 3, 5)))
        closure = layer_closure(layer.forward, layer.backward, x, [], seed=seed)
        params = [x, layer.weight, layer.bias]
        assert finite_diff_gradcheck(closure, params, seed=seed) < 1e-6

    @pytest.mark.parametrize("training", [False, True])
    def test_batchnorm(self, training):
        rng = rng64(20)
        layer = BatchNorm1d(3, dtype=np.float64)
        layer.gamma.value[...] = rng.uniform(0.5, 1.5, size=3)
        layer.beta.value[...] = rng.normal(size=3)
        x = Param(rng.normal(size=(2, 3, 7)))
        mask = np.ones((2, 7))
        mask[1, 5:] = 0.0

        def closure():
            y = layer.forward(x.value, mask=mask, training=training)
            loss, dy = scalar_projection_loss(y * mask[:, None, :], seed=3)
            x.grad += layer.backward(dy * mask[:, None, :])
            return loss

        params = [x, layer.gamma, layer.beta]
        assert finite_diff_gradcheck(closure, params, seed=1) < 1e-6

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_subblock_eval(self, seed):
        rng = rng64(seed + 30)
        sb = SubBlock(2, 3, 3, dropout=0.0, rng=rng, dtype=np.float64)
        # keep preactivations away from the ReLU kink
        sb.bn.beta.value[...] = 0.7
        x = Param(rng.normal(size=(1, 2, 5)))

        def closure():
            y = sb.forward(x.value, training=False)
            loss, dy = scalar_projection_loss(y, seed=seed)
            x.grad += sb.backward(dy)
            return loss

        params = [x] + [p for _, p in sb.named_params()]
        assert finite_diff_gradcheck(closure, params, seed=seed) < 1e-4

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_residual_block(self, seed):
        rng = rng64(seed + 40)
        block = ResidualBlock(3, 3, 3, n_sub=2, dropout=0.0, rng=rng, dtype=np.float64)
        block.subblocks[-1].bn.beta.value[...] = 0.5
        x = Param(rng.normal(size=(1, 3, 4)))

        def closure():
            y = block.forward(x.value, training=True, rng=np.random.default_rng(7))
            loss, dy = scalar_projection_loss(y, seed=seed)
            x.grad += block.backward(dy)
            return loss

        params = [x] + [p for _, p in block.named_params()]
        assert finite_diff_gradcheck(closure, params, seed=seed) < 1e-4

    def test_embedding(self):
        rng = rng64(50)
        emb = Embedding(6, 4, rng, dtype=np.float64)
        ids = np.array([[1, 3, 3, 5]])

        def closure():
            y = emb.forward(ids)
            loss, dy = scalar_projection_loss(y, seed=2)
            emb.backward(dy)
            return loss

        assert finite_diff_gradcheck(closure, [emb.weight], seed=2) < 1e-6

    def test_upsample_gradient(self):
        rng = rng64(60)
        durs = np.array([[1, 3, 0, 2]])
        w = gaussian_weights(durs[0], 6)[None]
        e = Param(rng.normal(size=(1, 3, 4)))

        def closure():
            y = gaussian_upsample(e.value, w)
            loss, dy = scalar_projection_loss(y, seed=4)
            e.grad += gaussian_upsample_backward(dy, w)
            return loss

        assert finite_diff_gradcheck(closure, [e], seed=4) < 1e-6

    def test_corrupted_backward_detected(self):
        rng = rng64(70)
        layer = PointwiseConv1d(3, 3, rng, dtype=np.float64)
        x = Param(rng.normal(size=(1, 3, 4)))

        def closure():
            y = layer.forward(x.value)
            loss, dy = scalar_projection_loss(y, seed=5)
            x.grad += 2.0 * layer.backward(dy)  # deliberately doubled
            return loss

        err = finite_diff_gradcheck(closure, [x], seed=5)
        assert err > 0.4  # doubled gradient -> relative error ~0.5


class TestGaussianUpsample:
    def test_single_token_constant(self):
        e = np.arange(3, dtype=np.float64).reshape(1, 3, 1)
        w = gaussian_weights(np.array([4]), 4)
        out = gaussian_upsample(e, w[None])
        for t in range(4):
            np.testing.assert_allclose(out[0, :, t], e[0, :, 0], atol=1e-12)

    def test_symmetric_weights_for_equal_durations(self):
        w = gaussian_weights(np.array([3, 3]), 6)
        np.testing.assert_allclose(w[:, 0], w[::-1, 1], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = rng64(80)
        for _ in range(20):
            durs = rng.integers(0, 5, size=rng.integers(1, 8))
            if durs.sum() == 0:
                durs[0] = 1
            w = gaussian_weights(durs, int(durs.sum()))
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)

    def test_explicit_closed_form_weights(self):
        # d = [1, 3]: centers 0.5 and 2.5, sigmas 0.5 and 1.5
        durs = np.array([1, 3])
        w = gaussian_weights(durs, 4)
        frames = np.arange(4) + 0.5
        g0 = np.exp(-0.5 * ((frames - 0.5) / 0.5) ** 2)
        g1 = np.exp(-0.5 * ((frames - 2.5) / 1.5) ** 2)
        expected = np.stack([g0, g1], axis=1)
        expected /= expected.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(w, expected, atol=1e-12)

    def test_zero_total_rejected(self):
        with pytest.raises(EmptyExpansion):
            gaussian_weights(np.array([0, 0]), 0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            gaussian_weights(np.array([2, 2]), 5)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = Param(np.array([1.0, -2.0, 3.0]))
        opt = Adam([p], weight_decay=0.0, clip_norm=None)
        p.grad[...] = np.array([0.1, -0.2, 0.3])
        before = p.value.copy()
        opt.step(lr=1e-3)
        delta = p.value - before
        np.testing.assert_allclose(delta, -1e-3 * np.sign(p.grad), rtol=1e-4)

    def test_weight_decay_only(self):
        p = Param(np.array([10.0, -10.0]))
        opt = Adam([p], weight_decay=1e-6, clip_norm=None)
        p.grad[...] = 0.0
        before = np.abs(p.value.copy())
        opt.step(lr=1e-3)
        assert np.all(np.abs(p.value) < before)

    def test_matches_reference_adam_on_quadratic(self):
        # independent reference implementation, straight from the update rule
        def reference(x0, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
            x = x0.copy()
            m = np.zeros_like(x)
            v = np.zeros_like(x)
            target = np.arange(5, dtype=np.float64)
            for t in range(1, steps + 1):
                g = 2.0 * (x - target)
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                mhat = m / (1 - b1 ** t)
                vhat = v / (1 - b2 ** t)
                x = x - lr * mhat / (np.sqrt(vhat) + eps)
            return x

        x0 = np.array([3.0, -1.0, 0.5, 7.0, 2.0])
        p = Param(x0.copy())
        opt = Adam([p], weight_decay=0.0, clip_norm=None)
        target = np.arange(5, dtype=np.float64)
        for _ in range(10):
            p.zero_grad()
            p.grad += 2.0 * (p.value - target)
            opt.step(lr=0.05)
        np.testing.assert_allclose(p.value, reference(x0, 10, 0.05), atol=1e-6)

    def test_nonfinite_rejected(self):
        p = Param(np.ones(3))
        opt = Adam([p])
        p.grad[...] = np.array([1.0, np.nan, 0.0])
        with pytest.raises(NonFinite):
            opt.step(lr=1e-3)

    def test_state_roundtrip(self):
        p = Param(np.ones(4))
        opt = Adam([p])
        p.grad[...] = 0.3
        opt.step(1e-3)
        state = {k: v.copy() for k, v in opt.state_tensors().items()}
        opt2 = Adam([p])
        opt2.load_state_tensors(state)
        assert opt2.step_count == 1
        np.testing.assert_allclose(opt2.m[0], opt.m[0])


class TestClipping:
    def test_large_gradient_clipped(self):
        p = Param(np.zeros(3))
        p.grad[...] = np.array([3.0, 4.0, 0.0])
        clip_global_norm([p], 1.0)
        assert np.linalg.norm(p.grad) <= 1.0 + 1e-6

    def test_small_gradient_untouched_bitwise(self):
        p = Param(np.zeros(3))
        g = np.array([0.1, 0.2, 0.3])
        p.grad[...] = g
        clip_global_norm([p], 1.0)
        assert np.array_equal(p.grad, g)


class TestSchedule:
    def test_warmup_endpoint(self):
        assert cosine_warmup_lr(20, 1000) == pytest.approx(1e-3)

    def test_final_step(self):
        assert cosine_warmup_lr(1000, 1000) == pytest.approx(1e-5)

    def test_cosine_midpoint(self):
        assert cosine_warmup_lr(510, 1000) == pytest.approx(5.05e-4)

    def test_ramp_is_linear(self):
        assert cosine_warmup_lr(10, 1000) == pytest.approx(5e-4)
        assert cosine_warmup_lr(0, 1000) == 0.0

    def test_bad_schedule(self):
        with pytest.raises(BadSchedule):
            cosine_warmup_lr(0, 0)
