"""Differentiable building blocks for 1D time-channel separable conv networks.

Conventions:
    activations   (B, C, T) arrays
    masks         (B, T) float arrays, 1.0 at valid frames; None means all valid
    each layer caches whatever its backward pass needs on the forward call
    backward(dy) returns dx and accumulates into Param.grad

Convolutions are stride 1 with zero same-padding, so the time axis is always
preserved. Batched sequences of unequal length are right-padded; sub-blocks
re-zero padded frames after each stage so zero-padding semantics match
per-utterance processing.
"""

from __future__ import annotations

import numpy as np

from ..errors import EmptyExpansion, LengthMismatch, ShapeMismatch


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0.0


def _mask3(mask, x):
    """Broadcast a (B, T) mask against (B, C, T), or all-ones if None."""
    if mask is None:
        return None
    if mask.shape != (x.shape[0], x.shape[2]):
        raise ShapeMismatch(f"mask {mask.shape} vs activations {x.shape}")
    # match the activation dtype so masking never upcasts the whole pass
    return mask.astype(x.dtype, copy=False)[:, None, :]


class DepthwiseConv1d:
    """Per-channel temporal convolution, kernel length K (odd), same-padding."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, dtype=np.float32):
        if kernel % 2 != 1:
            raise ShapeMismatch(f"kernel must be odd, got {kernel}")
        self.channels = channels
        self.kernel = kernel
        bound = np.sqrt(1.0 / (channels * kernel))
        self.weight = Param(rng.uniform(-bound, bound, size=(channels, kernel)).astype(dtype))

    def named_params(self):
        yield "weight", self.weight

    def _windows(self, x):
        """Zero-padded sliding windows as a strided view (B, C, K, T)."""
        pad = self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        s0, s1, s2 = xp.strides
        shape = (x.shape[0], x.shape[1], self.kernel, x.shape[2])
        return np.lib.stride_tricks.as_strided(xp, shape, (s0, s1, s2, s2),
                                               writeable=False)

    def forward(self, x, training=False):
        if x.shape[1] != self.channels:
            raise ShapeMismatch(f"expected {self.channels} channels, got {x.shape[1]}")
        self._win = self._windows(x)
        return np.einsum("bckt,ck->bct", self._win, self.weight.value)

    def backward(self, dy):
        self.weight.grad += np.einsum("bckt,bct->ck", self._win, dy)
        # dx is the correlation of dy with the flipped kernel
        return np.einsum("bckt,ck->bct", self._windows(dy), self.weight.value[:, ::-1])


class PointwiseConv1d:
    """1x1 channel-mixing convolution (a linear map applied per frame)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32, bias=False):
        bound = np.sqrt(1.0 / c_in)
        self.c_in, self.c_out = c_in, c_out
        self.weight = Param(rng.uniform(-bound, bound, size=(c_out, c_in)).astype(dtype))
        self.bias = Param(np.zeros(c_out, dtype=dtype)) if bias else None

    def named_params(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias

    def forward(self, x, training=False):
        if x.shape[1] != self.c_in:
            raise ShapeMismatch(f"expected {self.c_in} channels, got {x.shape[1]}")
        b, _, t = x.shape
        self._x2d = x.transpose(1, 0, 2).reshape(self.c_in, b * t)
        y = (self.weight.value @ self._x2d).reshape(self.c_out, b, t).transpose(1, 0, 2)
        if self.bias is not None:
            y = y + self.bias.value[None, :, None]
        return np.ascontiguousarray(y)

    def backward(self, dy):
        b, _, t = dy.shape
        dy2d = dy.transpose(1, 0, 2).reshape(self.c_out, b * t)
        self.weight.grad += dy2d @ self._x2d.T
        if self.bias is not None:
            self.bias.grad += dy2d.sum(axis=1)
        dx = (self.weight.value.T @ dy2d).reshape(self.c_in, b, t).transpose(1, 0, 2)
        return np.ascontiguousarray(dx)


class BatchNorm1d:
    """Per-channel batch normalization over (batch, time), mask-aware.

    Training mode uses batch statistics computed over valid frames only and
    updates running statistics (momentum 0.1); eval mode uses running stats.
    """

    def __init__(self, channels: int, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def named_params(self):
        yield "gamma", self.gamma
        yield "beta", self.beta

    def named_buffers(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var

    def forward(self, x, mask=None, training=False):
        m3 = _mask3(mask, x)
        self._training = training
        if training:
            if m3 is None:
                n = x.shape[0] * x.shape[2]
                mean = x.mean(axis=(0, 2))
                var = x.var(axis=(0, 2))
            else:
                n = float(m3.sum())
                mean = (x * m3).sum(axis=(0, 2)) / n
                var = (((x - mean[None, :, None]) ** 2) * m3).sum(axis=(0, 2)) / n
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * var
            self._n = n
            self._m3 = m3
        else:
            mean = self.running_mean
            var = self.running_var
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean[None, :, None]) * self._inv_std[None, :, None]
        if m3 is not None:
            self._xhat = self._xhat * m3
        return self.gamma.value[None, :, None] * self._xhat + self.beta.value[None, :, None]

    def backward(self, dy):
        xhat = self._xhat
        self.gamma.grad += np.einsum("bct,bct->c", dy, xhat)
        self.beta.grad += dy.sum(axis=(0, 2))
        dxhat = dy * self.gamma.value[None, :, None]
        if not self._training:
            return dxhat * self._inv_std[None, :, None]
        n = self._n
        m3 = self._m3
        if m3 is not None:
            dxhat = dxhat * m3
        sum_dxhat = dxhat.sum(axis=(0, 2))
        sum_dxhat_xhat = np.einsum("bct,bct->c", dxhat, xhat)
        dx = (dxhat - (sum_dxhat[None, :, None] + xhat * sum_dxhat_xhat[None, :, None]) / n) \
            * self._inv_std[None, :, None]
        if m3 is not None:
            dx = dx * m3
        return dx


class ReLU:
    def named_params(self):
        return iter(())

    def forward(self, x, training=False):
        self._pos = x > 0
        return x * self._pos

    def backward(self, dy):
        return dy * self._pos


class Dropout:
    """Inverted dropout: scales kept activations by 1/(1-rate) at train time."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ShapeMismatch(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def named_params(self):
        return iter(())

    def forward(self, x, training=False, rng: np.random.Generator | None = None):
        if not training or self.rate == 0.0:
            self._keep = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an RNG")
        self._keep = ((rng.random(x.shape) >= self.rate) / (1.0 - self.rate)).astype(x.dtype)
        return x * self._keep

    def backward(self, dy):
        if self._keep is None:
            return dy
        return dy * self._keep


class Embedding:
    """Token-id lookup table, (vocab, dim), init normal(0, 1)."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.vocab_size = vocab_size
        self.dim = dim
        self.weight = Param(rng.normal(size=(vocab_size, dim)).astype(dtype))

    def named_params(self):
        yield "weight", self.weight

    def forward(self, ids: np.ndarray, training=False):
        """(B, N) int ids -> (B, dim, N)."""
        self._ids = ids
        return np.ascontiguousarray(self.weight.value[ids].transpose(0, 2, 1))

    def backward(self, dy):
        flat = dy.transpose(0, 2, 1).reshape(-1, self.dim)
        np.add.at(self.weight.grad, self._ids.reshape(-1), flat)
        return None  # ids are not differentiable


# --- Gaussian upsampling ---

def gaussian_weights(durations: np.ndarray, t_frames: int, dtype=np.float64) -> np.ndarray:
    """Mixture weights (t_frames, n_tokens); rows sum to 1.

    Token i is a Gaussian centered mid-span with width max(d_i, 1)/2;
    zero-duration tokens are excluded from the mixture.
    """
    durations = np.asarray(durations, dtype=np.float64)
    total = durations.sum()
    if total < 1:
        raise EmptyExpansion("all durations are zero")
    if t_frames != int(total):
        raise LengthMismatch(f"{t_frames} frames vs duration sum {int(total)}")
    ends = np.cumsum(durations)
    centers = ends - durations / 2.0
    sigmas = np.maximum(durations, 1.0) / 2.0
    frames = np.arange(t_frames, dtype=np.float64) + 0.5
    z = (frames[:, None] - centers[None, :]) / sigmas[None, :]
    w = np.exp(-0.5 * z ** 2)
    w[:, durations == 0] = 0.0
    row_sums = w.sum(axis=1, keepdims=True)
    # guard against fully-underflowed rows: fall back to the nearest live token
    dead = row_sums[:, 0] <= 0.0
    if dead.any():
        live = np.nonzero(durations > 0)[0]
        for t in np.nonzero(dead)[0]:
            nearest = live[np.argmin(np.abs(centers[live] - frames[t]))]
            w[t, nearest] = 1.0
        row_sums = w.sum(axis=1, keepdims=True)
    return (w / row_sums).astype(dtype)


def gaussian_upsample(emb: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """(B, E, N) embeddings x (B, T, N) weights -> (B, E, T) frame features."""
    return np.einsum("ben,btn->bet", emb, weights)


def gaussian_upsample_backward(dy: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.einsum("bet,btn->ben", dy, weights)


# --- composite blocks ---

class SubBlock:
    """depthwise conv -> pointwise conv -> batch norm -> ReLU -> dropout.

    The conv/BN stage and the activation stage are separately invokable so a
    residual connection can be added before the final activation.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, dropout: float,
                 rng: np.random.Generator, dtype=np.float32):
        self.depthwise = DepthwiseConv1d(c_in, kernel, rng, dtype)
        self.pointwise = PointwiseConv1d(c_in, c_out, rng, dtype)
        self.bn = BatchNorm1d(c_out, dtype=dtype)
        self.relu = ReLU()
        self.dropout = Dropout(dropout)

    def named_params(self):
        for sub, layer in (("depthwise", self.depthwise), ("pointwise", self.pointwise),
                           ("bn", self.bn)):
            for name, p in layer.named_params():
                yield f"{sub}.{name}", p

    def named_buffers(self):
        for name, buf in self.bn.named_buffers():
            yield f"bn.{name}", buf

    def conv_bn(self, x, mask=None, training=False):
        h = self.depthwise.forward(x, training)
        h = self.pointwise.forward(h, training)
        return self.bn.forward(h, mask=mask, training=training)

    def activate(self, pre, mask=None, training=False, rng=None):
        h = self.relu.forward(pre, training)
        h = self.dropout.forward(h, training=training, rng=rng)
        m3 = _mask3(mask, h)
        self._m3 = m3
        return h * m3 if m3 is not None else h

    def forward(self, x, mask=None, training=False, rng=None):
        return self.activate(self.conv_bn(x, mask, training), mask, training, rng)

    def activate_backward(self, dy):
        if self._m3 is not None:
            dy = dy * self._m3
        dy = self.dropout.backward(dy)
        return self.relu.backward(dy)

    def conv_bn_backward(self, dpre):
        dh = self.bn.backward(dpre)
        dh = self.pointwise.backward(dh)
        return self.depthwise.backward(dh)

    def backward(self, dy):
        return self.conv_bn_backward(self.activate_backward(dy))


class ResidualBlock:
    """Stack of sub-blocks with a projected residual added before the final
    activation; the last sub-block's ReLU/dropout run after the sum."""

    def __init__(self, c_in: int, c_out: int, kernel: int, n_sub: int, dropout: float,
                 rng: np.random.Generator, dtype=np.float32):
        self.subblocks = [
            SubBlock(c_in if i == 0 else c_out, c_out, kernel, dropout, rng, dtype)
            for i in range(n_sub)
        ]
        self.res_pointwise = PointwiseConv1d(c_in, c_out, rng, dtype)
        self.res_bn = BatchNorm1d(c_out, dtype=dtype)

    def named_params(self):
        for i, sb in enumerate(self.subblocks):
            for name, p in sb.named_params():
                yield f"sub{i}.{name}", p
        for name, p in self.res_pointwise.named_params():
            yield f"res_pointwise.{name}", p
        for name, p in self.res_bn.named_params():
            yield f"res_bn.{name}", p

    def named_buffers(self):
        for i, sb in enumerate(self.subblocks):
            for name, buf in sb.named_buffers():
                yield f"sub{i}.{name}", buf
        for name, buf in self.res_bn.named_buffers():
            yield f"res_bn.{name}", buf

    def forward(self, x, mask=None, training=False, rng=None):
        h = x
        for sb in self.subblocks[:-1]:
            h = sb.forward(h, mask, training, rng)
        pre = self.subblocks[-1].conv_bn(h, mask, training)
        res = self.res_bn.forward(self.res_pointwise.forward(x, training), mask=mask,
                                  training=training)
        return self.subblocks[-1].activate(pre + res, mask, training, rng)

    def backward(self, dy):
        d_sum = self.subblocks[-1].activate_backward(dy)
        dx_res = self.res_pointwise.backward(self.res_bn.backward(d_sum))
        dh = self.subblocks[-1].conv_bn_backward(d_sum)
        for sb in reversed(self.subblocks[:-1]):
            dh = sb.backward(dh)
        return dh + dx_res
