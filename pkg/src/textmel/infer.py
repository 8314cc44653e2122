"""Three-stage inference: text -> durations -> pitch -> mel.

All models run in eval mode; outputs are deterministic for fixed inputs.
Batched synthesis right-pads and masks, so any batch size yields the same
per-utterance frame counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ckpt import load_checkpoint
from .errors import CheckpointMissing, VocabMismatch
from .features import F0_MAX, F0_MIN
from .models import (
    DurationModel,
    MelModel,
    PitchModel,
    batch_gaussian_weights,
    decode_durations,
)
from .text import BLANK_ID, TokenSeq, Vocab, insert_blanks, tokenize

FRAME_SECONDS = 0.0125


@dataclass
class Pipeline:
    duration: DurationModel
    pitch: PitchModel
    mel: MelModel
    vocab: Vocab
    mu_f0: float
    sigma_f0: float
    mel_mean: np.ndarray
    mel_std: np.ndarray


def load_pipeline(ckpt_dir: str | Path) -> Pipeline:
    ckpt_dir = Path(ckpt_dir)
    loaded = {}
    metas = {}
    for kind in ("duration", "pitch", "mel"):
        path = ckpt_dir / f"{kind}.ckpt"
        if not path.exists():
            raise CheckpointMissing(f"missing {kind} checkpoint at {path}")
        model, vocab, meta, extra = load_checkpoint(path)
        loaded[kind] = (model, vocab, extra)
        metas[kind] = meta
    shas = {metas[k]["vocab_sha"] for k in metas}
    if len(shas) != 1:
        raise VocabMismatch("the three checkpoints use different vocabularies")
    mel_extra = loaded["mel"][2]
    return Pipeline(
        duration=loaded["duration"][0],
        pitch=loaded["pitch"][0],
        mel=loaded["mel"][0],
        vocab=loaded["duration"][1],
        mu_f0=float(metas["pitch"]["mu_f0"]),
        sigma_f0=float(metas["pitch"]["sigma_f0"]),
        mel_mean=np.asarray(mel_extra["mel_mean"], dtype=np.float64),
        mel_std=np.asarray(mel_extra["mel_std"], dtype=np.float64),
    )


def _pad_token_batch(token_seqs: list[TokenSeq]):
    n_max = max(len(s) for s in token_seqs)
    ids = np.zeros((len(token_seqs), n_max), dtype=np.int64)
    mask = np.zeros((len(token_seqs), n_max), dtype=np.float32)
    for i, s in enumerate(token_seqs):
        ids[i, :len(s)] = s.ids
        mask[i, :len(s)] = 1.0
    return ids, mask


def predict_durations_batch(texts: list[str], model: DurationModel, vocab: Vocab,
                            durations_scale: float = 1.0):
    seqs = [insert_blanks(tokenize(t, vocab)) for t in texts]
    ids, mask = _pad_token_batch(seqs)
    pred = model.forward(ids, mask)
    decoded = decode_durations(pred, ids == BLANK_ID)
    if durations_scale != 1.0:
        # scale decoded durations, keeping the non-blank floor of one frame
        scaled = np.round(decoded * durations_scale)
        floor = np.where(ids == BLANK_ID, 0.0, 1.0)
        decoded = np.maximum(scaled, floor).astype(np.int64)
    durs = [decoded[i, :len(s)] for i, s in enumerate(seqs)]
    return seqs, durs


def predict_durations(text: str, model: DurationModel, vocab: Vocab,
                      durations_scale: float = 1.0):
    seqs, durs = predict_durations_batch([text], model, vocab, durations_scale)
    return seqs[0], durs[0]


def predict_pitch_batch(token_seqs, durs, model: PitchModel, mu: float, sigma: float):
    ids, _ = _pad_token_batch(token_seqs)
    weights, frame_mask = batch_gaussian_weights(durs)
    p_nv, p_body = model.forward(ids, weights, frame_mask)
    unvoiced = 1.0 / (1.0 + np.exp(-p_nv)) > 0.5
    f0 = np.where(unvoiced, 0.0, np.clip(p_body * sigma + mu, F0_MIN, F0_MAX))
    return [f0[i, :int(np.sum(d))] for i, d in enumerate(durs)]


def predict_pitch(token_seq: TokenSeq, durations: np.ndarray, model: PitchModel,
                  mu: float, sigma: float) -> np.ndarray:
    return predict_pitch_batch([token_seq], [durations], model, mu, sigma)[0]


def synthesize_batch(texts: list[str], pipe: Pipeline,
                     durations_scale: float = 1.0) -> list[np.ndarray]:
    seqs, durs = predict_durations_batch(texts, pipe.duration, pipe.vocab,
                                         durations_scale)
    f0_tracks = predict_pitch_batch(seqs, durs, pipe.pitch, pipe.mu_f0, pipe.sigma_f0)
    ids, _ = _pad_token_batch(seqs)
    weights, frame_mask = batch_gaussian_weights(durs)
    t_max = weights.shape[1]
    pnorm = np.zeros((len(texts), t_max), dtype=np.float32)
    for i, f0 in enumerate(f0_tracks):
        pnorm[i, :len(f0)] = np.where(f0 > 0.0, (f0 - pipe.mu_f0) / pipe.sigma_f0, 0.0)
    mel_norm = pipe.mel.forward(ids, weights, pnorm, frame_mask)
    out = []
    for i, d in enumerate(durs):
        t_i = int(np.sum(d))
        mel = mel_norm[i, :, :t_i] * pipe.mel_std[:, None] + pipe.mel_mean[:, None]
        out.append(mel)
    return out


def synthesize_mel(text: str, pipe: Pipeline, durations_scale: float = 1.0) -> np.ndarray:
    return synthesize_batch([text], pipe, durations_scale)[0]


def benchmark_rtf(texts: list[str], pipe: Pipeline, batch: int = 1) -> dict:
    """Per-text timings at batch 1, plus batched throughput.

    rtf = implied audio seconds (frames x 12.5 ms) / wall seconds.
    """
    rows = []
    for text in texts:
        t0 = time.perf_counter()
        mel = synthesize_mel(text, pipe)
        wall = time.perf_counter() - t0
        rows.append({"text_chars": len(text), "frames": int(mel.shape[1]),
                     "wall_ms": wall * 1000.0})
    total_frames = sum(r["frames"] for r in rows)
    total_wall = sum(r["wall_ms"] for r in rows) / 1000.0
    report = {
        "rtf": total_frames * FRAME_SECONDS / total_wall,
        "frames": total_frames,
        "wall_ms": total_wall * 1000.0,
        "rows": rows,
        "batch1_throughput_fps": total_frames / total_wall,
    }
    if batch > 1:
        t0 = time.perf_counter()
        for i in range(0, len(texts), batch):
            synthesize_batch(texts[i:i + batch], pipe)
        wall_b = time.perf_counter() - t0
        report["batch"] = batch
        report["batched_throughput_fps"] = total_frames / wall_b
    return report
