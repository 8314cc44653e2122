"""Adam with global-norm gradient clipping, plus the warmup/cosine LR policy."""

from __future__ import annotations

import math

import numpy as np

from ..errors import BadSchedule, NonFinite
from .layers import Param


def clip_global_norm(params: list[Param], max_norm: float = 1.0) -> float:
    """Scale all gradients so their joint L2 norm is <= max_norm.

    Gradients already inside the ball are left untouched bitwise.
    Returns the pre-clip norm.
    """
    total = 0.0
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NonFinite("gradient contains NaN or Inf")
        total += float(np.dot(g.ravel(), g.ravel()))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


class Adam:
    """Classic Adam with coupled L2 weight decay (decay added to gradients)."""

    def __init__(self, params: list[Param], beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=1e-6, clip_norm=1.0):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self, lr: float):
        if self.clip_norm is not None:
            clip_global_norm(self.params, self.clip_norm)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NonFinite("gradient contains NaN or Inf")
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], dtype=np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]):
        self.step_count = int(tensors["step"][0])
        for i in range(len(self.params)):
            self.m[i] = tensors[f"m.{i}"].astype(self.m[i].dtype)
            self.v[i] = tensors[f"v.{i}"].astype(self.v[i].dtype)


def cosine_warmup_lr(step: int, total_steps: int, lr_max=1e-3, lr_min=1e-5,
                     warmup_frac=0.02) -> float:
    """Linear ramp 0 -> lr_max over the warmup, then cosine decay to lr_min."""
    if total_steps <= 0:
        raise BadSchedule(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise BadSchedule(f"step {step} outside [0, {total_steps}]")
    warmup = math.ceil(warmup_frac * total_steps)
    if step < warmup:
        return lr_max * step / warmup
    denom = max(total_steps - warmup, 1)
    progress = (step - warmup) / denom
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))
