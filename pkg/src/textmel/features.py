"""Audio feature front end: log-mel spectrograms and frame-aligned F0 tracks.

Framing convention (shared by both features): 50 ms Hann window, 12.5 ms hop,
center-aligned frames via reflect padding of half a window on both ends, so
frame t is centered on sample t * hop and the frame count is
1 + floor(n_samples / hop).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoVoicedFrames, RateMismatch, TooShort

LOG_FLOOR = 1e-5
F0_MIN = 65.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.3
RMS_FLOOR = 1e-4
SIGMA_FLOOR = 1.0


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 22050
    win_seconds: float = 0.050
    hop_seconds: float = 0.0125
    n_mels: int = 80

    @property
    def win_length(self) -> int:
        return round(self.win_seconds * self.sample_rate)

    @property
    def hop_length(self) -> int:
        return round(self.hop_seconds * self.sample_rate)

    @property
    def n_fft(self) -> int:
        n = 1
        while n < self.win_length:
            n *= 2
        return n


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Unnormalized triangular filters on the HTK mel scale, (n_mels, n_fft//2+1)."""
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_freqs - lo) / (center - lo)
        down = (hi - fft_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_freqs(cfg: FeatureConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    return edges[1:-1]


def num_frames(n_samples: int, cfg: FeatureConfig) -> int:
    return 1 + n_samples // cfg.hop_length


def _frames(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Center-padded analysis frames, (T, win_length)."""
    win = cfg.win_length
    hop = cfg.hop_length
    if len(samples) < hop:
        raise TooShort(f"waveform has {len(samples)} samples, need at least {hop}")
    t_frames = num_frames(len(samples), cfg)
    half = win // 2
    mode = "reflect" if len(samples) > win else "constant"
    padded = np.pad(samples.astype(np.float64), (half, win), mode=mode)
    idx = np.arange(t_frames)[:, None] * hop + np.arange(win)[None, :]
    return padded[idx]


def compute_log_mel(samples: np.ndarray, cfg: FeatureConfig, sample_rate: int | None = None) -> np.ndarray:
    """Log-mel spectrogram, (n_mels, T), natural log with a 1e-5 floor."""
    if sample_rate is not None and sample_rate != cfg.sample_rate:
        raise RateMismatch(f"waveform rate {sample_rate} != config rate {cfg.sample_rate}")
    frames = _frames(samples, cfg)
    window = np.hanning(cfg.win_length)
    spec = np.abs(np.fft.rfft(frames * window, n=cfg.n_fft, axis=1))
    mel = mel_filterbank(cfg) @ spec.T
    return np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)


def extract_f0(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Per-frame F0 in Hz via normalized autocorrelation peak picking.

    Unvoiced frames (weak periodicity or near-silence) are encoded as 0.0.
    Frame centers match compute_log_mel exactly.
    """
    frames = _frames(samples, cfg)
    sr = cfg.sample_rate
    lag_min = int(np.ceil(sr / F0_MAX))
    lag_max = int(np.floor(sr / F0_MIN))
    win = cfg.win_length
    if lag_max >= win:
        raise TooShort("analysis window shorter than the longest pitch period")

    f0 = np.zeros(len(frames), dtype=np.float32)
    for i, frame in enumerate(frames):
        rms = np.sqrt(np.mean(frame ** 2))
        if rms < RMS_FLOOR:
            continue
        frame = frame - frame.mean()
        lags = np.arange(lag_min, lag_max + 1)
        r = np.empty(len(lags))
        for j, lag in enumerate(lags):
            a = frame[: win - lag]
            b = frame[lag:]
            denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
            r[j] = np.dot(a, b) / denom if denom > 0 else 0.0
        r_max = r.max()
        if r_max < VOICING_THRESHOLD:
            continue
        # prefer the shortest lag among near-maximal peaks (suppresses
        # sub-harmonic picks at integer multiples of the true period)
        candidates = np.nonzero(r >= 0.95 * r_max)[0]
        j = int(candidates[0])
        lag = float(lags[j])
        if 0 < j < len(lags) - 1:
            y0, y1, y2 = r[j - 1], r[j], r[j + 1]
            denom = y0 - 2 * y1 + y2
            if abs(denom) > 1e-12:
                lag += 0.5 * (y0 - y2) / denom
        f0[i] = float(np.clip(sr / lag, F0_MIN, F0_MAX))
    return f0


def compute_f0_stats(tracks: list[np.ndarray]) -> tuple[float, float]:
    """(mu, sigma) over voiced frames only; sigma is population stdev, floored at 1 Hz."""
    voiced = np.concatenate([t[t > 0] for t in tracks]) if tracks else np.array([])
    if voiced.size == 0:
        raise NoVoicedFrames("no voiced frames in any track")
    mu = float(voiced.mean())
    sigma = float(voiced.std())
    return mu, max(sigma, SIGMA_FLOOR)


# --- WAV I/O (PCM 16-bit mono RIFF) ---

def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    sample_rate = None
    samples = None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt, channels, sample_rate = struct.unpack_from("<HHI", body, 0)
            (bits,) = struct.unpack_from("<H", body, 14)
            if fmt != 1 or channels != 1 or bits != 16:
                raise ValueError(f"{path}: expected PCM 16-bit mono")
        elif chunk_id == b"data":
            samples = np.frombuffer(body, dtype="<i2").astype(np.float32) / 32768.0
        pos += 8 + size + (size & 1)
    if sample_rate is None or samples is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    return samples, sample_rate


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(pcm)))
        fh.write(b"WAVEfmt ")
        fh.write(struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(pcm)))
        fh.write(pcm)
