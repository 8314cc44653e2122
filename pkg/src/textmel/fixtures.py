"""Synthetic desk-scale corpus generator.

Each utterance is built backwards from a scripted duration sequence: tokens
get tone-complex audio (per-grapheme harmonic timbre, scripted F0 glide),
blanks and spaces get silence, and the waveform length is chosen so the mel
frame count equals the duration sum exactly. A companion lattice places
1 - eta probability mass on the true expanded label in every frame, so
Viterbi alignment recovers the scripted durations.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .features import FeatureConfig, write_wav
from .tenio import write_ten1
from .text import BLANK_ID, Vocab, expand_by_durations, insert_blanks, tokenize
from .text import DurationSeq

FIXTURE_TEXTS = (
    "the cat",
    "a dog ran",
    "hello there",
    "mel maker",
    "pitch test!",
    "one or two",
    "deep net",
    "fast talk",
    "quartz, ok",
    "sing a song",
)

DEFAULT_ETA = 0.1
_HARMONIC_AMPS = np.array([1.0, 0.55, 0.35, 0.22, 0.12])


def _is_voiced_symbol(sym: str) -> bool:
    return sym.isalnum()


def script_durations(ids: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Random per-token durations: non-blanks 3-6 frames, blanks 0-2.

    A blank between two equal non-blank tokens always gets at least one
    frame, otherwise no CTC path can reproduce the script.
    """
    durs = np.zeros(len(ids), dtype=np.int64)
    for i, tok in enumerate(ids):
        if tok != BLANK_ID:
            durs[i] = rng.integers(3, 7)
            continue
        d = int(rng.integers(0, 3))
        if 0 < i < len(ids) - 1 and ids[i - 1] == ids[i + 1]:
            d = max(d, 1)
        durs[i] = d
    return durs


def synthesize_wave(frame_tokens: list[int], vocab: Vocab, base_f0: float,
                    cfg: FeatureConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Waveform whose mel frame count equals len(frame_tokens).

    Returns (samples, scripted per-frame F0 with 0.0 at silent frames).
    Phase is continuous across frames; amplitude switches at frame edges.
    """
    t_frames = len(frame_tokens)
    hop = cfg.hop_length
    n_samples = (t_frames - 1) * hop
    # slow linear glide keeps F0 inside the extractor's search band
    glide = np.linspace(0.95, 1.05, t_frames) * base_f0
    f0_script = np.zeros(t_frames)
    sample_f0 = np.zeros(max(n_samples, 1))
    gain = np.zeros(max(n_samples, 1))
    timbre = np.zeros((max(n_samples, 1), len(_HARMONIC_AMPS)))
    for t, tok in enumerate(frame_tokens):
        lo, hi = t * hop, min((t + 1) * hop, n_samples)
        if lo >= hi:
            continue
        sym = vocab.symbol(tok)
        if _is_voiced_symbol(sym):
            f0_script[t] = glide[t]
            sample_f0[lo:hi] = glide[t]
            gain[lo:hi] = 0.3
            # deterministic per-grapheme harmonic mix
            timbre[lo:hi] = np.roll(_HARMONIC_AMPS, tok % len(_HARMONIC_AMPS))
    phase = np.cumsum(2.0 * np.pi * sample_f0 / cfg.sample_rate)
    wave = np.zeros(max(n_samples, 1))
    for h, _ in enumerate(_HARMONIC_AMPS):
        wave += timbre[:, h] * np.sin((h + 1) * phase)
    wave *= gain / _HARMONIC_AMPS.sum()
    return wave[:n_samples] if n_samples else wave[:0], f0_script


def make_lattice(frame_tokens: list[int], vocab_size: int,
                 eta: float = DEFAULT_ETA) -> np.ndarray:
    """(T, V) log-prob rows: 1 - eta on the true label, eta spread evenly."""
    t_frames = len(frame_tokens)
    lattice = np.full((t_frames, vocab_size), np.log(eta / (vocab_size - 1)),
                      dtype=np.float32)
    lattice[np.arange(t_frames), frame_tokens] = np.log1p(-eta)
    return lattice


def generate_fixtures(out_dir: str | Path, seed: int = 0, eta: float = DEFAULT_ETA,
                      cfg: FeatureConfig = FeatureConfig(),
                      texts: tuple[str, ...] = FIXTURE_TEXTS) -> dict:
    """Write wavs, lattices, manifest, and vocab; return a summary dict."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "lattices").mkdir(parents=True, exist_ok=True)
    vocab = Vocab.default()
    vocab.save(out_dir / "vocab.txt")
    rng = np.random.default_rng(seed)
    manifest = []
    summary = {"utterances": [], "eta": eta, "seed": seed}
    for i, text in enumerate(texts):
        utt_id = f"utt{i:02d}"
        tokens = insert_blanks(tokenize(text, vocab))
        durs = script_durations(tokens.ids, rng)
        expanded = expand_by_durations(tokens, DurationSeq(tuple(int(d) for d in durs)))
        base_f0 = float(rng.uniform(140.0, 260.0))
        wave, f0_script = synthesize_wave(list(expanded.ids), vocab, base_f0, cfg, rng)
        write_wav(out_dir / "wav" / f"{utt_id}.wav", wave, cfg.sample_rate)
        write_ten1(out_dir / "lattices" / f"{utt_id}.ten",
                   make_lattice(list(expanded.ids), len(vocab.symbols), eta))
        manifest.append({"id": utt_id, "audio_path": f"wav/{utt_id}.wav", "text": text})
        summary["utterances"].append({
            "id": utt_id, "text": text, "frames": int(durs.sum()),
            "durations": [int(d) for d in durs], "base_f0": base_f0,
        })
    with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for rec in manifest:
            fh.write(json.dumps(rec) + "\n")
    with open(out_dir / "fixture_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary
