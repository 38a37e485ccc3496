"""Log-mel feature extraction: framing, power spectra, mel filterbank, padding.

All functions are pure; nothing here is trained through, so everything runs in
float64 and callers may parallelise per utterance freely.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

FEATURE_FORMAT_VERSION = 1


class DspError(ValueError):
    pass


@dataclass(frozen=True)
class DspConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 64
    target_frames: int = 1280
    sample_rate: int = 16000
    log_floor: float = 1e-10

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    def validate(self) -> "DspConfig":
        if self.sample_rate <= 0:
            raise DspError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.frame_length < 1 or self.hop_length < 1:
            raise DspError("frame and hop must each span at least one sample")
        if self.frame_length > self.n_fft:
            raise DspError(
                f"frame length {self.frame_length} exceeds n_fft {self.n_fft}"
            )
        if self.n_mels < 2:
            raise DspError(f"n_mels must be >= 2, got {self.n_mels}")
        if self.target_frames <= 0:
            raise DspError("target_frames must be positive")
        if not self.log_floor > 0:
            raise DspError("log_floor must be a positive constant")
        return self

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Utterance:
    id: str
    speaker: str
    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    values: np.ndarray  # [n_mels, n_frames]
    fingerprint: str
    raw_frames: int = field(default=-1)

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (the DFT-friendly variant)."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def num_frames(n_samples: int, frame_length: int, hop_length: int) -> int:
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // hop_length + 1


def frame_signal(samples, cfg: DspConfig) -> np.ndarray:
    """Slice a signal into Hann-windowed frames, shape [n_frames, frame_length]."""
    x = np.asarray(samples, dtype=float)
    L, H = cfg.frame_length, cfg.hop_length
    if x.ndim != 1:
        raise DspError("expected a 1-D sample sequence")
    if len(x) < L:
        raise DspError(f"utterance too short: {len(x)} samples < frame length {L}")
    frames = np.lib.stride_tricks.sliding_window_view(x, L)[::H]
    return frames * hann_window(L)


def power_spectrum(frames, n_fft: int) -> np.ndarray:
    """|DFT|^2 of each frame zero-padded to n_fft; last axis becomes n_fft//2 + 1."""
    frames = np.asarray(frames, dtype=float)
    if frames.shape[-1] > n_fft:
        raise DspError(f"frame of {frames.shape[-1]} samples exceeds n_fft {n_fft}")
    spec = np.fft.rfft(frames, n=n_fft, axis=-1)
    return spec.real**2 + spec.imag**2


def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    """Triangular filters, peak 1, centres equally spaced in mel from 0 Hz to Nyquist.

    Returns a [n_mels, n_fft//2 + 1] matrix.
    """
    n_bins = cfg.n_fft // 2 + 1
    mel_points = np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_hz = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft

    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, centre, hi = hz_points[m : m + 3]
        rising = (bin_hz - lo) / (centre - lo)
        falling = (hi - bin_hz) / (hi - centre)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not np.any(fb[m] > 0):
            raise DspError(
                f"mel filter {m} ({lo:.1f}-{hi:.1f} Hz) covers no FFT bin; "
                f"reduce n_mels ({cfg.n_mels}) or raise n_fft ({cfg.n_fft})"
            )
    return fb


def mel_centres_hz(cfg: DspConfig) -> np.ndarray:
    mel_points = np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2)
    return mel_to_hz(mel_points[1:-1])


def mel_spectrogram(u: Utterance, cfg: DspConfig, filterbank=None) -> MelSpectrogram:
    if u.sample_rate != cfg.sample_rate:
        raise DspError(
            f"utterance {u.id!r} is at {u.sample_rate} Hz, expected {cfg.sample_rate}; "
            "resample on ingest"
        )
    fb = mel_filterbank(cfg) if filterbank is None else filterbank
    frames = frame_signal(u.samples, cfg)
    energies = power_spectrum(frames, cfg.n_fft) @ fb.T
    values = np.log(energies + cfg.log_floor).T
    return MelSpectrogram(np.ascontiguousarray(values), cfg.fingerprint(), values.shape[1])


def pad_or_truncate(spec: MelSpectrogram, target_frames: int, log_floor: float) -> MelSpectrogram:
    """Right-pad with log(log_floor) columns or keep the first target_frames columns."""
    if target_frames <= 0:
        raise DspError("target_frames must be positive")
    n = spec.n_frames
    if n >= target_frames:
        values = spec.values[:, :target_frames].copy()
    else:
        values = np.full((spec.n_mels, target_frames), math.log(log_floor))
        values[:, :n] = spec.values
    return MelSpectrogram(values, spec.fingerprint, spec.raw_frames)


def extract(u: Utterance, cfg: DspConfig, filterbank=None) -> MelSpectrogram:
    return pad_or_truncate(mel_spectrogram(u, cfg, filterbank), cfg.target_frames, cfg.log_floor)


# --- audio ingest -----------------------------------------------------------


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read PCM WAV as mono float64 in [-1, 1]. Stereo channels are averaged."""
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(float) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(float) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(float)
    else:
        raise DspError(f"unsupported WAV sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise DspError("empty audio")
    if not np.all(np.isfinite(x)):
        raise DspError("non-finite samples")
    return np.clip(x, -1.0, 1.0), int(sr)


def resample(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    if sr_in == sr_out:
        return x
    g = gcd(sr_in, sr_out)
    return np.clip(resample_poly(x, sr_out // g, sr_in // g), -1.0, 1.0)


def load_utterance(path, utt_id: str, speaker: str, cfg: DspConfig) -> Utterance:
    x, sr = read_wav(path)
    return Utterance(utt_id, speaker, resample(x, sr, cfg.sample_rate), cfg.sample_rate)


# --- feature cache ------------------------------------------------------------
# One .npz per utterance holding `values` ([n_mels, target_frames] float64) and
# `header`, a JSON string with keys: format_version, dsp_fingerprint, dsp_config,
# utterance_id, speaker, duration, raw_frames, source.


def save_features(path, spec: MelSpectrogram, cfg: DspConfig, utt_id: str,
                  speaker: str, duration: float, source: str = "") -> None:
    header = {
        "format_version": FEATURE_FORMAT_VERSION,
        "dsp_fingerprint": cfg.fingerprint(),
        "dsp_config": asdict(cfg),
        "utterance_id": utt_id,
        "speaker": speaker,
        "duration": float(duration),
        "raw_frames": int(spec.raw_frames),
        "source": source,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, values=spec.values, header=np.array(json.dumps(header, sort_keys=True)))
    tmp.replace(path)


def read_feature_header(path) -> dict:
    with np.load(path) as z:
        return json.loads(str(z["header"]))


def load_features(path) -> tuple[MelSpectrogram, dict]:
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        values = z["values"]
    if header.get("format_version") != FEATURE_FORMAT_VERSION:
        raise DspError(f"{path}: unsupported feature format {header.get('format_version')}")
    return MelSpectrogram(values, header["dsp_fingerprint"], header["raw_frames"]), header
