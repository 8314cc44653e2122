"""The three networks: duration predictor, pitch predictor, mel generator.

All three share the same trunk style: an embedding front end feeding a stack
of 1D time-channel separable conv sub-blocks with residual blocks in the
middle. Channel widths can be scaled down uniformly for desk-scale runs;
structure (block/sub-block counts, kernel sizes) never changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, LengthMismatch, ShapeMismatch
from .nn import (
    Embedding,
    PointwiseConv1d,
    ResidualBlock,
    SubBlock,
    gaussian_upsample,
    gaussian_upsample_backward,
    gaussian_weights,
)

DUR_BLOCK_KERNELS = (5, 7, 9, 11, 13)
MEL_BLOCK_KERNELS_256 = (5, 7, 9, 13, 15, 17)
MEL_BLOCK_KERNELS_512 = (21, 23, 25)
N_MEL_BINS = 80


def _scaled(width: int, scale: float) -> int:
    return max(4, int(round(width * scale)))


@dataclass(frozen=True)
class DurationModelConfig:
    vocab_size: int
    embed_dim: int = 64
    conv1_channels: int = 256
    block_channels: int = 256
    block_kernels: tuple = DUR_BLOCK_KERNELS
    conv2_channels: int = 512
    n_conv1_sub: int = 3
    n_sub_per_block: int = 5
    dropout: float = 0.1
    scale: float = 1.0
    # optional 32-way classification head kept for architecture parity;
    # the training path always uses the width-1 regression head
    classification_classes: int = 0

    def validate(self):
        if self.vocab_size < 2:
            raise ConfigInvalid("vocab must contain the blank plus at least one symbol")
        if not 0 < self.scale <= 1:
            raise ConfigInvalid(f"scale must be in (0, 1], got {self.scale}")

    def to_json(self) -> dict:
        return {"kind": "duration", "vocab_size": self.vocab_size, "scale": self.scale,
                "classification_classes": self.classification_classes}

    @classmethod
    def from_json(cls, data: dict) -> "DurationModelConfig":
        return cls(vocab_size=data["vocab_size"], scale=data.get("scale", 1.0),
                   classification_classes=data.get("classification_classes", 0))


@dataclass(frozen=True)
class PitchModelConfig:
    vocab_size: int
    embed_dim: int = 64
    conv1_channels: int = 256
    block_channels: int = 256
    block_kernels: tuple = DUR_BLOCK_KERNELS
    conv2_channels: int = 512
    n_conv1_sub: int = 3
    n_sub_per_block: int = 5
    dropout: float = 0.1
    scale: float = 1.0

    def validate(self):
        if self.vocab_size < 2:
            raise ConfigInvalid("vocab must contain the blank plus at least one symbol")
        if not 0 < self.scale <= 1:
            raise ConfigInvalid(f"scale must be in (0, 1], got {self.scale}")

    def to_json(self) -> dict:
        return {"kind": "pitch", "vocab_size": self.vocab_size, "scale": self.scale}

    @classmethod
    def from_json(cls, data: dict) -> "PitchModelConfig":
        return cls(vocab_size=data["vocab_size"], scale=data.get("scale", 1.0))


@dataclass(frozen=True)
class MelModelConfig:
    vocab_size: int
    embed_dim: int = 256
    conv1_channels: int = 256
    blocks: tuple = field(default=tuple(
        [(256, k) for k in MEL_BLOCK_KERNELS_256] + [(512, k) for k in MEL_BLOCK_KERNELS_512]
    ))
    conv2_channels: int = 1024
    n_conv1_sub: int = 3
    n_sub_per_block: int = 5
    dropout: float = 0.1
    scale: float = 1.0

    def validate(self):
        if self.vocab_size < 2:
            raise ConfigInvalid("vocab must contain the blank plus at least one symbol")
        if not 0 < self.scale <= 1:
            raise ConfigInvalid(f"scale must be in (0, 1], got {self.scale}")

    def to_json(self) -> dict:
        return {"kind": "mel", "vocab_size": self.vocab_size, "scale": self.scale}

    @classmethod
    def from_json(cls, data: dict) -> "MelModelConfig":
        return cls(vocab_size=data["vocab_size"], scale=data.get("scale", 1.0))


class QuartzTrunk:
    """Conv1 sub-blocks -> residual blocks -> Conv2 sub-block."""

    def __init__(self, c_in: int, conv1_ch: int, n_conv1: int,
                 blocks: list[tuple[int, int]], n_sub: int, conv2_ch: int,
                 dropout: float, rng: np.random.Generator, dtype=np.float32):
        self.conv1 = []
        c = c_in
        for _ in range(n_conv1):
            self.conv1.append(SubBlock(c, conv1_ch, 3, dropout, rng, dtype))
            c = conv1_ch
        self.blocks = []
        for ch, k in blocks:
            self.blocks.append(ResidualBlock(c, ch, k, n_sub, dropout, rng, dtype))
            c = ch
        self.conv2 = SubBlock(c, conv2_ch, 1, dropout, rng, dtype)
        self.out_channels = conv2_ch
        self.receptive_radius = n_conv1 * 1 + sum(n_sub * (k // 2) for _, k in blocks)

    def named_params(self):
        for i, sb in enumerate(self.conv1):
            for name, p in sb.named_params():
                yield f"conv1.{i}.{name}", p
        for i, blk in enumerate(self.blocks):
            for name, p in blk.named_params():
                yield f"block{i}.{name}", p
        for name, p in self.conv2.named_params():
            yield f"conv2.{name}", p

    def named_buffers(self):
        for i, sb in enumerate(self.conv1):
            for name, buf in sb.named_buffers():
                yield f"conv1.{i}.{name}", buf
        for i, blk in enumerate(self.blocks):
            for name, buf in blk.named_buffers():
                yield f"block{i}.{name}", buf
        for name, buf in self.conv2.named_buffers():
            yield f"conv2.{name}", buf

    def forward(self, x, mask=None, training=False, rng=None):
        h = x
        for sb in self.conv1:
            h = sb.forward(h, mask, training, rng)
        for blk in self.blocks:
            h = blk.forward(h, mask, training, rng)
        return self.conv2.forward(h, mask, training, rng)

    def backward(self, dy):
        dh = self.conv2.backward(dy)
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        for sb in reversed(self.conv1):
            dh = sb.backward(dh)
        return dh


class _ModelBase:
    def named_params(self):
        raise NotImplementedError

    def named_buffers(self):
        return iter(())

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        out = {name: p.value for name, p in self.named_params()}
        for name, buf in self.named_buffers():
            out[f"buffer.{name}"] = buf
        return out

    def load_state(self, tensors: dict[str, np.ndarray]):
        for name, p in self.named_params():
            if name not in tensors:
                raise ShapeMismatch(f"checkpoint missing tensor {name}")
            if tensors[name].shape != p.value.shape:
                raise ShapeMismatch(f"shape mismatch for {name}")
            p.value[...] = tensors[name].astype(p.value.dtype)
        for name, buf in self.named_buffers():
            key = f"buffer.{name}"
            if key in tensors:
                buf[...] = tensors[key].astype(buf.dtype)


class DurationModel(_ModelBase):
    """Blank-interleaved token ids -> per-token predicted log(1 + duration)."""

    def __init__(self, cfg: DurationModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        s = cfg.scale
        self.embed = Embedding(cfg.vocab_size, _scaled(cfg.embed_dim, s), rng, dtype)
        self.trunk = QuartzTrunk(
            _scaled(cfg.embed_dim, s), _scaled(cfg.conv1_channels, s), cfg.n_conv1_sub,
            [(_scaled(cfg.block_channels, s), k) for k in cfg.block_kernels],
            cfg.n_sub_per_block, _scaled(cfg.conv2_channels, s), cfg.dropout, rng, dtype)
        head_width = cfg.classification_classes if cfg.classification_classes else 1
        self.head = PointwiseConv1d(self.trunk.out_channels, head_width, rng, dtype, bias=True)

    def named_params(self):
        for name, p in self.embed.named_params():
            yield f"embed.{name}", p
        for name, p in self.trunk.named_params():
            yield f"trunk.{name}", p
        for name, p in self.head.named_params():
            yield f"head.{name}", p

    def named_buffers(self):
        for name, buf in self.trunk.named_buffers():
            yield f"trunk.{name}", buf

    def forward(self, ids: np.ndarray, mask=None, training=False, rng=None):
        h = self.embed.forward(ids)
        h = self.trunk.forward(h, mask, training, rng)
        return self.head.forward(h)[:, 0, :]

    def backward(self, dpred: np.ndarray):
        dh = self.head.backward(dpred[:, None, :])
        dh = self.trunk.backward(dh)
        self.embed.backward(dh)


class PitchModel(_ModelBase):
    """Expanded (Gaussian-upsampled) token embeddings -> per-frame
    non-voiced logit and normalized pitch value."""

    def __init__(self, cfg: PitchModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        s = cfg.scale
        self.embed = Embedding(cfg.vocab_size, _scaled(cfg.embed_dim, s), rng, dtype)
        self.trunk = QuartzTrunk(
            _scaled(cfg.embed_dim, s), _scaled(cfg.conv1_channels, s), cfg.n_conv1_sub,
            [(_scaled(cfg.block_channels, s), k) for k in cfg.block_kernels],
            cfg.n_sub_per_block, _scaled(cfg.conv2_channels, s), cfg.dropout, rng, dtype)
        self.head_nv = PointwiseConv1d(self.trunk.out_channels, 1, rng, dtype, bias=True)
        self.head_body = PointwiseConv1d(self.trunk.out_channels, 1, rng, dtype, bias=True)

    def named_params(self):
        for name, p in self.embed.named_params():
            yield f"embed.{name}", p
        for name, p in self.trunk.named_params():
            yield f"trunk.{name}", p
        for name, p in self.head_nv.named_params():
            yield f"head_nv.{name}", p
        for name, p in self.head_body.named_params():
            yield f"head_body.{name}", p

    def named_buffers(self):
        for name, buf in self.trunk.named_buffers():
            yield f"trunk.{name}", buf

    def frame_input(self, ids: np.ndarray, weights: np.ndarray):
        emb = self.embed.forward(ids)
        return gaussian_upsample(emb, weights.astype(emb.dtype))

    def forward_frames(self, x: np.ndarray, mask=None, training=False, rng=None):
        h = self.trunk.forward(x, mask, training, rng)
        return self.head_nv.forward(h)[:, 0, :], self.head_body.forward(h)[:, 0, :]

    def forward(self, ids: np.ndarray, weights: np.ndarray, mask=None, training=False, rng=None):
        self._weights = weights
        return self.forward_frames(self.frame_input(ids, weights), mask, training, rng)

    def backward(self, d_nv: np.ndarray, d_body: np.ndarray):
        dh = self.head_nv.backward(d_nv[:, None, :]) + self.head_body.backward(d_body[:, None, :])
        dx = self.trunk.backward(dh)
        demb = gaussian_upsample_backward(dx, self._weights.astype(dx.dtype))
        self.embed.backward(demb)


class MelModel(_ModelBase):
    """Expanded token embeddings + projected pitch -> 80-bin mel frames."""

    def __init__(self, cfg: MelModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        s = cfg.scale
        self.embed = Embedding(cfg.vocab_size, _scaled(cfg.embed_dim, s), rng, dtype)
        self.pitch_proj = PointwiseConv1d(1, _scaled(cfg.embed_dim, s), rng, dtype, bias=True)
        self.trunk = QuartzTrunk(
            _scaled(cfg.embed_dim, s), _scaled(cfg.conv1_channels, s), cfg.n_conv1_sub,
            [(_scaled(ch, s), k) for ch, k in cfg.blocks],
            cfg.n_sub_per_block, _scaled(cfg.conv2_channels, s), cfg.dropout, rng, dtype)
        self.head = PointwiseConv1d(self.trunk.out_channels, N_MEL_BINS, rng, dtype, bias=True)

    def named_params(self):
        for name, p in self.embed.named_params():
            yield f"embed.{name}", p
        for name, p in self.pitch_proj.named_params():
            yield f"pitch_proj.{name}", p
        for name, p in self.trunk.named_params():
            yield f"trunk.{name}", p
        for name, p in self.head.named_params():
            yield f"head.{name}", p

    def named_buffers(self):
        for name, buf in self.trunk.named_buffers():
            yield f"trunk.{name}", buf

    def frame_input(self, ids: np.ndarray, weights: np.ndarray, pitch_norm: np.ndarray):
        """pitch_norm: (B, T) normalized F0 scalars (0 at unvoiced frames)."""
        emb = self.embed.forward(ids)
        up = gaussian_upsample(emb, weights.astype(emb.dtype))
        cond = self.pitch_proj.forward(pitch_norm[:, None, :].astype(up.dtype))
        return up + cond

    def forward_frames(self, x: np.ndarray, mask=None, training=False, rng=None):
        h = self.trunk.forward(x, mask, training, rng)
        return self.head.forward(h)

    def forward(self, ids, weights, pitch_norm, mask=None, training=False, rng=None):
        self._weights = weights
        return self.forward_frames(self.frame_input(ids, weights, pitch_norm),
                                   mask, training, rng)

    def backward(self, dpred: np.ndarray):
        # dx feeds both the upsample path and the pitch projection

        dh = self.head.backward(dpred)
        dx = self.trunk.backward(dh)
        self.pitch_proj.backward(dx)
        demb = gaussian_upsample_backward(dx, self._weights.astype(dx.dtype))
        self.embed.backward(demb)


def build_duration_model(cfg: DurationModelConfig, seed=0, dtype=np.float32) -> DurationModel:
    return DurationModel(cfg, seed, dtype)


def build_pitch_model(cfg: PitchModelConfig, seed=0, dtype=np.float32) -> PitchModel:
    return PitchModel(cfg, seed, dtype)


def build_mel_model(cfg: MelModelConfig, seed=0, dtype=np.float32) -> MelModel:
    return MelModel(cfg, seed, dtype)


def count_params(model: _ModelBase) -> int:
    """Trainable scalars only; BN running stats are buffers and excluded."""
    return sum(p.value.size for _, p in model.named_params())


def batch_gaussian_weights(durations_list) -> tuple[np.ndarray, np.ndarray]:
    """Per-item upsampling weights, padded: (B, T_max, N_max) plus a frame
    mask (B, T_max)."""
    totals = [int(np.sum(d)) for d in durations_list]
    t_max = max(totals)
    n_max = max(len(d) for d in durations_list)
    b = len(durations_list)
    weights = np.zeros((b, t_max, n_max))
    frame_mask = np.zeros((b, t_max))
    for i, durs in enumerate(durations_list):
        w = gaussian_weights(np.asarray(durs), totals[i])
        weights[i, :totals[i], :len(durs)] = w
        frame_mask[i, :totals[i]] = 1.0
    return weights, frame_mask


# --- losses (each returns loss plus gradients w.r.t. predictions) ---

def duration_loss(pred_logdur: np.ndarray, durations: np.ndarray, mask: np.ndarray):
    """L2 on logarithmic targets: target = ln(1 + d), mean over unmasked tokens."""
    if pred_logdur.shape != durations.shape:
        raise LengthMismatch(f"{pred_logdur.shape} vs {durations.shape}")
    target = np.log1p(durations.astype(pred_logdur.dtype))
    diff = (pred_logdur - target) * mask
    n = mask.sum()
    loss = float((diff ** 2).sum() / n)
    return loss, 2.0 * diff / n


def decode_durations(pred_logdur: np.ndarray, blank_mask: np.ndarray) -> np.ndarray:
    """Inverse of the log target with per-position floors: 1 at non-blank
    positions, 0 at blanks."""
    raw = np.round(np.expm1(pred_logdur))
    floor = np.where(blank_mask, 0.0, 1.0)
    return np.maximum(raw, floor).astype(np.int64)


def pitch_loss(p_nv: np.ndarray, p_body: np.ndarray, f0: np.ndarray,
               mu: float, sigma: float, mask: np.ndarray):
    """BCE on the non-voiced head plus MSE on the normalized-pitch head.

    The MSE term averages over voiced frames only and is 0 when none exist.
    Returns (loss, d_p_nv, d_p_body).
    """
    if not (p_nv.shape == p_body.shape == f0.shape == mask.shape):
        raise LengthMismatch("per-frame series must share one shape")
    n = mask.sum()
    target_nv = (f0 == 0.0).astype(p_nv.dtype)
    z = p_nv
    # numerically stable BCE-with-logits
    bce = np.maximum(z, 0.0) - z * target_nv + np.log1p(np.exp(-np.abs(z)))
    bce_loss = float((bce * mask).sum() / n)
    sig = 1.0 / (1.0 + np.exp(-z))
    d_nv = (sig - target_nv) * mask / n

    voiced = (f0 > 0.0) * mask
    n_voiced = voiced.sum()
    if n_voiced > 0:
        f0_norm = (f0 - mu) / sigma
        diff = (p_body - f0_norm) * voiced
        mse_loss = float((diff ** 2).sum() / n_voiced)
        d_body = 2.0 * diff / n_voiced
    else:
        mse_loss = 0.0
        d_body = np.zeros_like(p_body)
    return bce_loss + mse_loss, d_nv, d_body


def mel_loss(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray):
    """Mean squared error over unmasked (frame, bin) cells."""
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    m3 = mask[:, None, :]
    diff = (pred - truth) * m3
    n = mask.sum() * pred.shape[1]
    loss = float((diff ** 2).sum() / n)
    return loss, 2.0 * diff / n
