"""Log-mel conditioning features: extraction, normalization, per-rate upsampling.

One feature sequence is extracted from each utterance at its native rate and
reused by every synthesis stage; stages receive it sinc-upsampled to their
own sampling rate. The stage waveform length is authoritative: the upsampled
series is cropped or edge-padded to match it exactly.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import Waveform
from .errors import AudioFormatError, FeatureLengthError
from .resample import resample_array

_FEATURE_MAGIC = b"MELF"
_FEATURE_VERSION = 1
_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class FeatureConfig:
    """Analysis settings for the conditioning features."""

    sample_rate: int = 48000
    fft_size: int = 2048
    win_length: int = 2048
    hop: int = 240
    n_mels: int = 80
    fmin: float = 80.0
    fmax: float = 7600.0
    log_floor: float = 1e-5

    def __post_init__(self) -> None:
        if self.win_length > self.fft_size:
            raise ValueError("win_length must not exceed fft_size")
        if self.hop < 1:
            raise ValueError("hop must be at least 1")
        if not 0.0 <= self.fmin < self.fmax:
            raise ValueError("need 0 <= fmin < fmax")

    @property
    def hop_seconds(self) -> float:
        return self.hop / self.sample_rate

    def for_rate(self, rate: int) -> "FeatureConfig":
        """Same analysis scaled to another sampling rate (frame shift preserved)."""
        if rate == self.sample_rate:
            return self
        hop = self.hop * rate / self.sample_rate
        if abs(hop - round(hop)) > 1e-9:
            raise ValueError(
                f"hop {self.hop} at {self.sample_rate} Hz does not scale to an "
                f"integer at {rate} Hz"
            )
        scale = rate / self.sample_rate
        fft = max(8, 2 * round(self.fft_size * scale / 2))
        win = min(fft, max(8, 2 * round(self.win_length * scale / 2)))
        return replace(
            self, sample_rate=rate, fft_size=fft, win_length=win, hop=round(hop)
        )


@dataclass
class MelSpectrogram:
    """Frames-by-bands matrix of log-mel values plus its analysis metadata."""

    values: np.ndarray  # (frames, bands) float32
    hop_seconds: float
    band_lo: float
    band_hi: float
    source_rate: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("feature matrix must be 2-D (frames, bands)")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_frames * self.hop_seconds


@dataclass(frozen=True)
class FeatureStats:
    """Per-band mean and standard deviation over a fitting corpus."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean/std must be matching 1-D arrays")
        if np.any(self.std <= 0):
            raise ValueError("std must be positive")


@dataclass
class ConditioningSeries:
    """Per-band feature values resampled to a stage's waveform rate."""

    values: np.ndarray  # (channels, samples)
    rate: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError("conditioning series must be 2-D (channels, samples)")


def _hann(n: int) -> np.ndarray:
    # periodic form, consistent frame-to-frame energy
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, frame_len: int, hop: int, pad: int) -> np.ndarray:
    """Centered frames with reflection padding (zeros if the signal is shorter
    than the pad)."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("cannot frame an empty signal")
    if pad > 0:
        if x.size > pad:
            x = np.pad(x, pad, mode="reflect")
        else:
            x = np.pad(x, pad, mode="constant")
    if x.size < frame_len:
        x = np.pad(x, (0, frame_len - x.size), mode="constant")
    n_frames = 1 + (x.size - frame_len) // hop
    return sliding_window_view(x, frame_len)[:: hop][:n_frames]


def stft_mag(
    x: Waveform | np.ndarray, fft_size: int, win_length: int, hop: int
) -> np.ndarray:
    """Magnitude spectrogram (frames, fft_size//2+1): Hann window, centered
    frames, reflection padding."""
    if win_length > fft_size:
        raise ValueError("win_length must not exceed fft_size")
    samples = x.samples if isinstance(x, Waveform) else np.asarray(x)
    window = np.zeros(fft_size)
    off = (fft_size - win_length) // 2
    window[off : off + win_length] = _hann(win_length)
    frames = frame_signal(samples.astype(np.float64), fft_size, hop, fft_size // 2)
    return np.abs(np.fft.rfft(frames * window, axis=-1))


def mel_filterbank(
    rate: int, fft_size: int, n_mels: int, fmin: float, fmax: float
) -> np.ndarray:
    """Triangular filterbank (n_mels, bins) on the HTK mel scale, peak 1.

    Bands lying entirely above the Nyquist get all-zero rows, so low-rate
    audio simply leaves the top bands at the log floor.
    """

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    edges_hz = from_mel(np.linspace(to_mel(fmin), to_mel(fmax), n_mels + 2))
    bins_hz = np.fft.rfftfreq(fft_size, d=1.0 / rate)
    weights = np.zeros((n_mels, bins_hz.size))
    for b in range(n_mels):
        lo, mid, hi = edges_hz[b : b + 3]
        up = (bins_hz - lo) / max(mid - lo, 1e-12)
        down = (hi - bins_hz) / max(hi - mid, 1e-12)
        weights[b] = np.clip(np.minimum(up, down), 0.0, 1.0)
    return weights


def extract_logmel(w: Waveform, cfg: FeatureConfig) -> MelSpectrogram:
    """Log of the mel-weighted magnitude spectrogram, floored at cfg.log_floor."""
    if w.rate != cfg.sample_rate:
        raise ValueError(
            f"waveform rate {w.rate} != analysis rate {cfg.sample_rate}; "
            f"use cfg.for_rate({w.rate})"
        )
    spec = stft_mag(w, cfg.fft_size, cfg.win_length, cfg.hop)
    bank = mel_filterbank(cfg.sample_rate, cfg.fft_size, cfg.n_mels, cfg.fmin, cfg.fmax)
    mel = np.log(np.maximum(spec @ bank.T, cfg.log_floor))
    return MelSpectrogram(
        mel.astype(np.float32), cfg.hop_seconds, cfg.fmin, cfg.fmax, cfg.sample_rate
    )


def fit_stats(corpus: Sequence[MelSpectrogram]) -> FeatureStats:
    """Per-band mean/std pooled over all frames of the corpus."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    stacked = np.concatenate([m.values.astype(np.float64) for m in corpus], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    if np.any(std < _STD_FLOOR):
        warnings.warn(
            f"{int(np.sum(std < _STD_FLOOR))} constant feature band(s); "
            f"std floored at {_STD_FLOOR}",
            stacklevel=2,
        )
        std = np.maximum(std, _STD_FLOOR)
    return FeatureStats(mean, std)


def apply_stats(m: MelSpectrogram, stats: FeatureStats) -> MelSpectrogram:
    """Normalize each band to the fitted zero-mean unit-variance scale."""
    values = (m.values.astype(np.float64) - stats.mean) / stats.std
    return MelSpectrogram(
        values.astype(np.float32), m.hop_seconds, m.band_lo, m.band_hi, m.source_rate
    )


def upsample_features(
    m: MelSpectrogram, target_rate: int, target_len: int
) -> ConditioningSeries:
    """Sinc-interpolate each band from the frame rate to ``target_rate`` and
    crop/edge-pad to exactly ``target_len`` samples."""
    frame_rate = Fraction(1) / Fraction(m.hop_seconds).limit_denominator(10**9)
    if frame_rate.denominator != 1:
        raise ValueError(f"frame rate 1/{m.hop_seconds} s is not an integer Hz value")
    frame_rate = int(frame_rate)
    natural = round(m.n_frames * target_rate / frame_rate)
    if abs(natural - target_len) > 2 * target_rate * m.hop_seconds:
        raise FeatureLengthError(
            f"feature duration gives {natural} samples at {target_rate} Hz but "
            f"{target_len} were requested (more than 2 hops apart)"
        )
    series = resample_array(
        m.values.T.astype(np.float64), frame_rate, target_rate
    )
    if series.shape[-1] >= target_len:
        series = series[:, :target_len]
    else:
        pad = target_len - series.shape[-1]
        series = np.concatenate([series, np.repeat(series[:, -1:], pad, axis=1)], axis=1)
    return ConditioningSeries(series.astype(np.float32), target_rate)


_FEATURE_HEADER = "<4sIIIdddI"  # magic, version, frames, bands, hop_s, lo, hi, rate


def write_features(m: MelSpectrogram, path: str | Path) -> None:
    """Binary feature file: small header + little-endian float32, row-major."""
    header = struct.pack(
        _FEATURE_HEADER,
        _FEATURE_MAGIC,
        _FEATURE_VERSION,
        m.n_frames,
        m.n_bands,
        m.hop_seconds,
        m.band_lo,
        m.band_hi,
        m.source_rate,
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(m.values, dtype="<f4").tobytes())


def read_features(path: str | Path) -> MelSpectrogram:
    head_size = struct.calcsize(_FEATURE_HEADER)
    with open(path, "rb") as f:
        head = f.read(head_size)
        if len(head) < head_size:
            raise AudioFormatError(f"{path}: truncated feature file")
        magic, version, frames, bands, hop_s, lo, hi, rate = struct.unpack(
            _FEATURE_HEADER, head
        )
        if magic != _FEATURE_MAGIC:
            raise AudioFormatError(f"{path}: bad magic {magic!r}")
        if version != _FEATURE_VERSION:
            raise AudioFormatError(f"{path}: unsupported version {version}")
        raw = f.read(frames * bands * 4)
    if len(raw) != frames * bands * 4:
        raise AudioFormatError(f"{path}: truncated feature data")
    data = np.frombuffer(raw, dtype="<f4")
    return MelSpectrogram(data.reshape(frames, bands).copy(), hop_s, lo, hi, rate)


def write_stats(stats: FeatureStats, path: str | Path) -> None:
    payload = {
        "version": 1,
        "n_bands": int(stats.mean.size),
        "mean": stats.mean.tolist(),
        "std": stats.std.tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def read_stats(path: str | Path) -> FeatureStats:
    payload = json.loads(Path(path).read_text())
    return FeatureStats(np.array(payload["mean"]), np.array(payload["std"]))
