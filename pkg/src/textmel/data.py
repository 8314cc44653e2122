"""Dataset preparation: features plus alignment targets plus corpus stats.

Output layout under out_dir:
    mel/<id>.ten        80 x T log-mel (TEN1)
    f0/<id>.ten         T-frame pitch track (TEN1)
    durations.jsonl     one record per aligned utterance
    pitch_stats.json    {"mu_f0", "sigma_f0"} over voiced frames
    mel_stats.json      per-bin mean / std over all prepared frames
    vocab.txt           the vocabulary used for tokenization
    prepared.json       summary with any skipped utterances and reasons
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import alignment_to_record, read_records, viterbi_align
from .errors import (
    EmptyDataset,
    FrameCountMismatch,
    Infeasible,
    MissingLattice,
    ParseError,
    RateMismatch,
)
from .features import FeatureConfig, compute_f0_stats, compute_log_mel, extract_f0, read_wav
from .tenio import read_ten1, write_ten1
from .text import Vocab, insert_blanks, tokenize


def read_manifest(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), lineno) from exc
            for key in ("id", "audio_path", "text"):
                if key not in rec:
                    raise ParseError(f"manifest record missing '{key}'", lineno)
            records.append(rec)
    return records


def prepare_training_set(manifest_path: str | Path, lattice_dir: str | Path,
                         out_dir: str | Path,
                         cfg: FeatureConfig = FeatureConfig()) -> dict:
    manifest_path = Path(manifest_path)
    lattice_dir = Path(lattice_dir)
    out_dir = Path(out_dir)
    (out_dir / "mel").mkdir(parents=True, exist_ok=True)
    (out_dir / "f0").mkdir(parents=True, exist_ok=True)

    vocab_path = manifest_path.parent / "vocab.txt"
    vocab = Vocab.load(vocab_path) if vocab_path.exists() else Vocab.default()
    vocab.save(out_dir / "vocab.txt")

    records = read_manifest(manifest_path)
    duration_records = []
    tracks = []
    mel_sum = np.zeros(cfg.n_mels)
    mel_sqsum = np.zeros(cfg.n_mels)
    mel_count = 0
    skipped = []
    for rec in records:
        utt_id = rec["id"]
        audio_path = Path(rec["audio_path"])
        if not audio_path.is_absolute():
            audio_path = manifest_path.parent / audio_path
        samples, sr = read_wav(audio_path)
        if sr != cfg.sample_rate:
            raise RateMismatch(f"{utt_id}: wav rate {sr} != config {cfg.sample_rate}")
        mel = compute_log_mel(samples, cfg)
        f0 = extract_f0(samples, cfg)
        lattice_path = lattice_dir / f"{utt_id}.ten"
        if not lattice_path.exists():
            raise MissingLattice(f"no lattice for {utt_id} at {lattice_path}")
        lattice = read_ten1(lattice_path)
        if lattice.shape[0] != mel.shape[1]:
            raise FrameCountMismatch(
                f"{utt_id}: lattice frames {lattice.shape[0]} != mel frames {mel.shape[1]}")
        target = insert_blanks(tokenize(rec["text"], vocab))
        try:
            result = viterbi_align(lattice, target)
        except Infeasible as exc:
            skipped.append({"id": utt_id, "reason": str(exc)})
            continue
        write_ten1(out_dir / "mel" / f"{utt_id}.ten", mel.astype(np.float32))
        write_ten1(out_dir / "f0" / f"{utt_id}.ten", f0.astype(np.float32))
        duration_records.append(alignment_to_record(result, utt_id, target))
        tracks.append(f0)
        mel_sum += mel.sum(axis=1)
        mel_sqsum += (mel ** 2).sum(axis=1)
        mel_count += mel.shape[1]
    if not duration_records:
        raise EmptyDataset("no utterance survived preparation")

    from .align import write_records
    write_records(out_dir / "durations.jsonl", duration_records)
    mu, sigma = compute_f0_stats(tracks)
    with open(out_dir / "pitch_stats.json", "w", encoding="utf-8") as fh:
        json.dump({"mu_f0": mu, "sigma_f0": sigma}, fh)
    mean = mel_sum / mel_count
    var = mel_sqsum / mel_count - mean ** 2
    std = np.sqrt(np.maximum(var, 1e-12))
    # per-bin normalization makes the mel training target roughly unit scale
    with open(out_dir / "mel_stats.json", "w", encoding="utf-8") as fh:
        json.dump({"mean": mean.tolist(), "std": std.tolist()}, fh)
    summary = {"prepared": len(duration_records), "skipped": skipped}
    with open(out_dir / "prepared.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary


@dataclass
class Utterance:
    utt_id: str
    tokens: np.ndarray
    durations: np.ndarray
    mel: np.ndarray
    f0: np.ndarray


@dataclass
class PreparedDataset:
    utterances: list
    vocab: Vocab
    mu_f0: float
    sigma_f0: float
    mel_mean: np.ndarray
    mel_std: np.ndarray

    def normalize_mel(self, mel: np.ndarray) -> np.ndarray:
        return (mel - self.mel_mean[:, None]) / self.mel_std[:, None]

    def denormalize_mel(self, mel: np.ndarray) -> np.ndarray:
        return mel * self.mel_std[:, None] + self.mel_mean[:, None]


def load_prepared(data_dir: str | Path) -> PreparedDataset:
    data_dir = Path(data_dir)
    vocab = Vocab.load(data_dir / "vocab.txt")
    with open(data_dir / "pitch_stats.json", encoding="utf-8") as fh:
        pstats = json.load(fh)
    with open(data_dir / "mel_stats.json", encoding="utf-8") as fh:
        mstats = json.load(fh)
    utterances = []
    for rec in read_records(data_dir / "durations.jsonl"):
        utt_id = rec["id"]
        utterances.append(Utterance(
            utt_id=utt_id,
            tokens=np.asarray(rec["tokens"], dtype=np.int64),
            durations=np.asarray(rec["durations"], dtype=np.int64),
            mel=read_ten1(data_dir / "mel" / f"{utt_id}.ten"),
            f0=read_ten1(data_dir / "f0" / f"{utt_id}.ten"),
        ))
    if not utterances:
        raise EmptyDataset(f"no utterances under {data_dir}")
    return PreparedDataset(
        utterances=utterances, vocab=vocab,
        mu_f0=float(pstats["mu_f0"]), sigma_f0=float(pstats["sigma_f0"]),
        mel_mean=np.asarray(mstats["mean"]), mel_std=np.asarray(mstats["std"]))
