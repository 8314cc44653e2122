"""Training loops for the duration, pitch, and mel models.

One loop owns its model exclusively. Batches are right-padded with masks
carried through batch-norm statistics and every loss term. Metrics go to a
CSV next to the checkpoint, with a rendered loss-curve figure beside it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .ckpt import save_checkpoint
from .data import PreparedDataset, load_prepared
from .errors import ConfigInvalid, NonFinite
from .models import (
    DurationModel,
    DurationModelConfig,
    MelModel,
    MelModelConfig,
    PitchModel,
    PitchModelConfig,
    batch_gaussian_weights,
    decode_durations,
    duration_loss,
    mel_loss,
    pitch_loss,
)
from .nn import Adam, cosine_warmup_lr
from .plots import save_loss_curve
from .text import BLANK_ID

KINDS = ("duration", "pitch", "mel")
# full-scale defaults; desk-scale runs override via config JSON
DEFAULT_BATCH = {"duration": 256, "pitch": 256, "mel": 64}


@dataclass(frozen=True)
class TrainConfig:
    kind: str
    steps: int = 300
    batch_size: int = 0
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    warmup_frac: float = 0.02
    seed: int = 0
    scale: float = 0.25
    dropout: float = 0.1
    eval_every: int = 25

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigInvalid(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.steps < 1:
            raise ConfigInvalid("steps must be >= 1")
        if self.batch_size < 0:
            raise ConfigInvalid("batch_size must be >= 0 (0 means the default)")

    @property
    def effective_batch(self) -> int:
        return self.batch_size or DEFAULT_BATCH[self.kind]

    def to_json(self) -> dict:
        return {"kind": self.kind, "steps": self.steps, "batch_size": self.batch_size,
                "lr_max": self.lr_max, "lr_min": self.lr_min,
                "warmup_frac": self.warmup_frac, "seed": self.seed,
                "scale": self.scale, "dropout": self.dropout,
                "eval_every": self.eval_every}

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(data) - known
        if bad:
            raise ConfigInvalid(f"unknown config fields: {sorted(bad)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# --- batch assembly (right-padding with masks) ---

def pad_tokens(utts) -> tuple[np.ndarray, np.ndarray]:
    n_max = max(len(u.tokens) for u in utts)
    ids = np.zeros((len(utts), n_max), dtype=np.int64)
    mask = np.zeros((len(utts), n_max))
    for i, u in enumerate(utts):
        ids[i, :len(u.tokens)] = u.tokens
        mask[i, :len(u.tokens)] = 1.0
    return ids, mask


def pad_frames(utts, key) -> np.ndarray:
    arrays = [getattr(u, key) for u in utts]
    t_max = max(a.shape[-1] for a in arrays)
    lead = arrays[0].shape[:-1]
    out = np.zeros((len(utts),) + lead + (t_max,), dtype=np.float64)
    for i, a in enumerate(arrays):
        out[i, ..., :a.shape[-1]] = a
    return out


def pitch_norm_input(f0: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    """Normalized F0 with 0 at unvoiced frames, as fed to the mel model."""
    return np.where(f0 > 0.0, (f0 - mu) / sigma, 0.0)


def _build_model(cfg: TrainConfig, vocab_size: int):
    if cfg.kind == "duration":
        return DurationModel(DurationModelConfig(
            vocab_size=vocab_size, scale=cfg.scale, dropout=cfg.dropout), seed=cfg.seed)
    if cfg.kind == "pitch":
        return PitchModel(PitchModelConfig(
            vocab_size=vocab_size, scale=cfg.scale, dropout=cfg.dropout), seed=cfg.seed)
    return MelModel(MelModelConfig(
        vocab_size=vocab_size, scale=cfg.scale, dropout=cfg.dropout), seed=cfg.seed)


def _batch_step(kind: str, model, utts, ds: PreparedDataset, training: bool, rng):
    """One forward (+backward when training) pass; returns the loss."""
    dt = model.embed.weight.value.dtype
    ids, token_mask = pad_tokens(utts)
    token_mask = token_mask.astype(dt)
    if kind == "duration":
        durs = pad_frames(utts, "durations").astype(dt)
        pred = model.forward(ids, token_mask, training=training, rng=rng)
        loss, dpred = duration_loss(pred, durs, token_mask)
        if training:
            model.backward(dpred)
        return loss
    weights, frame_mask = batch_gaussian_weights([u.durations for u in utts])
    frame_mask = frame_mask.astype(dt)
    if kind == "pitch":
        f0 = pad_frames(utts, "f0").astype(dt)
        p_nv, p_body = model.forward(ids, weights, frame_mask, training=training, rng=rng)
        loss, d_nv, d_body = pitch_loss(p_nv, p_body, f0, ds.mu_f0, ds.sigma_f0, frame_mask)
        if training:
            model.backward(d_nv, d_body)
        return loss
    f0 = pad_frames(utts, "f0")
    pnorm = pitch_norm_input(f0, ds.mu_f0, ds.sigma_f0).astype(dt)
    target = pad_frames(utts, "mel")
    target = (target - ds.mel_mean[None, :, None]) / ds.mel_std[None, :, None]
    target = (target * frame_mask[:, None, :]).astype(dt)
    pred = model.forward(ids, weights, pnorm, frame_mask, training=training, rng=rng)
    loss, dpred = mel_loss(pred, target, frame_mask)
    if training:
        model.backward(dpred)
    return loss


def evaluate(kind: str, model, ds: PreparedDataset) -> float:
    return _batch_step(kind, model, ds.utterances, ds, training=False, rng=None)


def train(cfg: TrainConfig, data_dir: str | Path, out_path: str | Path,
          dataset: PreparedDataset | None = None) -> dict:
    """Run the loop; write best checkpoint, metrics CSV, and loss figure.

    On a non-finite loss or gradient the last good checkpoint is written
    before the error propagates.
    """
    cfg.validate()
    ds = dataset if dataset is not None else load_prepared(data_dir)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    model = _build_model(cfg, len(ds.vocab))
    opt = Adam(model.params())
    rng = np.random.default_rng(cfg.seed)
    order = []
    rows = []
    best_loss = np.inf
    best_written = False

    def write_best(loss, step):
        save_checkpoint(out_path, model, cfg.kind, ds.vocab,
                        meta_extra=_meta_extra(cfg, ds, step, loss),
                        extra_tensors=_extra_tensors(cfg, ds))

    try:
        for step in range(1, cfg.steps + 1):
            if len(order) < cfg.effective_batch:
                perm = list(rng.permutation(len(ds.utterances)))
                order.extend(perm)
            take, order = order[:cfg.effective_batch], order[cfg.effective_batch:]
            utts = [ds.utterances[i] for i in take]
            model.zero_grad()
            loss = _batch_step(cfg.kind, model, utts, ds, training=True, rng=rng)
            if not np.isfinite(loss):
                raise NonFinite(f"step {step}: loss is {loss}")
            lr = cosine_warmup_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min, cfg.warmup_frac)
            opt.step(lr)
            rows.append((step, loss, lr))
            if step % cfg.eval_every == 0 or step == cfg.steps:
                val = evaluate(cfg.kind, model, ds)
                if val < best_loss:
                    best_loss = val
                    write_best(val, step)
                    best_written = True
    except NonFinite:
        if best_written:
            pass  # last good checkpoint already on disk
        raise
    finally:
        _write_metrics(out_path, cfg, rows)
    if not best_written:
        write_best(evaluate(cfg.kind, model, ds), cfg.steps)
    return {"best_loss": float(best_loss) if np.isfinite(best_loss) else None,
            "steps": cfg.steps, "losses": [r[1] for r in rows]}


def _meta_extra(cfg: TrainConfig, ds: PreparedDataset, step: int, loss: float) -> dict:
    extra = {"train_config": cfg.to_json(), "step": step, "val_loss": float(loss)}
    if cfg.kind in ("pitch", "mel"):
        extra["mu_f0"] = ds.mu_f0
        extra["sigma_f0"] = ds.sigma_f0
    return extra


def _extra_tensors(cfg: TrainConfig, ds: PreparedDataset) -> dict | None:
    if cfg.kind == "mel":
        return {"mel_mean": ds.mel_mean, "mel_std": ds.mel_std}
    return None


def _write_metrics(out_path: Path, cfg: TrainConfig, rows) -> None:
    csv_path = out_path.with_suffix(".metrics.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        writer.writerows(rows)
    if rows:
        steps, losses, lrs = zip(*rows)
        save_loss_curve(steps, losses, lrs, out_path.with_suffix(".loss.png"),
                        f"{cfg.kind} training loss")


# --- training-set quality metrics used by the overfit checks ---

def duration_within1_accuracy(model: DurationModel, ds: PreparedDataset) -> float:
    hits = total = 0
    for u in ds.utterances:
        pred = model.forward(u.tokens[None, :])
        decoded = decode_durations(pred, u.tokens[None, :] == BLANK_ID)[0]
        hits += int((np.abs(decoded - u.durations) <= 1).sum())
        total += len(u.durations)
    return hits / total


def vuv_accuracy(model: PitchModel, ds: PreparedDataset) -> float:
    hits = total = 0
    for u in ds.utterances:
        weights, mask = batch_gaussian_weights([u.durations])
        p_nv, _ = model.forward(u.tokens[None, :], weights, mask)
        pred_unvoiced = 1.0 / (1.0 + np.exp(-p_nv[0])) > 0.5
        hits += int((pred_unvoiced == (u.f0 == 0.0)).sum())
        total += len(u.f0)
    return hits / total


def mel_train_mse(model: MelModel, ds: PreparedDataset) -> float:
    return evaluate("mel", model, ds)
