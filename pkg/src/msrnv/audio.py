"""PCM audio I/O, silence trimming, and fixed-length clip sampling.

All operations are pure and safe to run concurrently on distinct files.
A :class:`ClipSampler` owns RNG state and belongs to a single worker.
"""

from __future__ import annotations

import wave
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AudioFormatError, UnsupportedAudioError

_INT16_SCALE = 32768.0


@dataclass
class Waveform:
    """A mono sample sequence in [-1, 1] together with its sampling rate in Hz."""

    samples: np.ndarray
    rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.issubdtype(self.samples.dtype, np.floating):
            self.samples = self.samples.astype(np.float32)
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.rate) <= 0:
            raise ValueError(f"sampling rate must be positive, got {self.rate}")
        self.rate = int(self.rate)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.rate


@dataclass
class ClipSampler:
    """Draws fixed-length clips at offsets uniform over the valid range.

    Deterministic for a given ``seed``; a fresh sampler with the same seed
    reproduces the same offset sequence.
    """

    clip_seconds: float
    seed: int
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")
        self._rng = np.random.default_rng(np.random.SeedSequence(self.seed))

    def clip_samples(self, rate: int) -> int:
        n = round(self.clip_seconds * rate)
        if n < 1 or abs(n - self.clip_seconds * rate) > 1e-6:
            raise ValueError(
                f"clip_seconds={self.clip_seconds} does not give an integer "
                f"sample count at {rate} Hz"
            )
        return n

    def sample(self, w: Waveform) -> Waveform:
        """Cut one clip; short inputs are zero-padded to clip length (flagged)."""
        n = self.clip_samples(w.rate)
        if len(w) < n:
            warnings.warn(
                f"input shorter than clip ({len(w)} < {n} samples); zero-padding",
                stacklevel=2,
            )
            out = np.zeros(n, dtype=w.samples.dtype)
            out[: len(w)] = w.samples
            return Waveform(out, w.rate)
        offset = int(self._rng.integers(0, len(w) - n + 1))
        return Waveform(w.samples[offset : offset + n].copy(), w.rate)


def read_wav(path: str | Path) -> Waveform:
    """Read a mono 16-bit PCM RIFF/WAVE file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if channels != 1:
        raise UnsupportedAudioError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise UnsupportedAudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform((ints / _INT16_SCALE).astype(np.float32), rate)


def write_wav(w: Waveform, path: str | Path, bit_depth: int = 16) -> None:
    """Write mono PCM; samples are clamped to [-1, 1] then rounded to int16."""
    if bit_depth != 16:
        raise UnsupportedAudioError(f"only 16-bit output is supported, got {bit_depth}")
    x = np.clip(np.asarray(w.samples, dtype=np.float64), -1.0, 1.0)
    ints = np.clip(np.rint(x * _INT16_SCALE), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.rate)
        f.writeframes(ints.tobytes())


def _frame_rms(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    if len(x) < win:
        padded = np.zeros(win, dtype=np.float64)
        padded[: len(x)] = x
        x = padded
    n_frames = 1 + (len(x) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.sqrt(np.mean(np.square(x[idx].astype(np.float64)), axis=1))


def trim_silence(
    w: Waveform,
    threshold_db: float = -50.0,
    pad_ms: float = 200.0,
    window_ms: float = 25.0,
    hop_ms: float = 10.0,
) -> Waveform:
    """Remove leading/trailing regions whose short-time RMS sits below
    ``threshold_db`` relative to the peak frame RMS, keeping up to ``pad_ms``
    of original context on each side.

    Cut points snap to the analysis hop grid, which makes trimming idempotent
    when the surrounding silence is genuinely below threshold. If less than
    ``pad_ms`` of context exists it is kept as-is (never zero-filled), so a
    signal with no silence passes through unchanged. An all-silent input
    yields an empty waveform and a warning.
    """
    if threshold_db >= 0:
        raise ValueError("threshold_db must be negative (relative to peak)")
    win = max(1, round(window_ms * 1e-3 * w.rate))
    hop = max(1, round(hop_ms * 1e-3 * w.rate))
    rms = _frame_rms(w.samples, win, hop)
    peak = rms.max() if rms.size else 0.0
    if peak <= 0:
        warnings.warn("all-silent input; returning empty waveform", stacklevel=2)
        return Waveform(np.zeros(0, dtype=w.samples.dtype), w.rate)
    active = np.flatnonzero(rms >= peak * 10.0 ** (threshold_db / 20.0))
    if active.size == 0:
        warnings.warn("all-silent input; returning empty waveform", stacklevel=2)
        return Waveform(np.zeros(0, dtype=w.samples.dtype), w.rate)
    # a frame turns active as soon as its window touches energy, up to
    # win - hop early; compensate, then keep cuts on the hop grid so a second
    # trim sees the identical frame pattern (idempotence)
    onset = hop * ((active[0] * hop + max(win - hop, 0)) // hop)
    tail = (active[-1] + 1) * hop
    # pad rounded to whole hops so the re-trimmed signal sees the same frame grid
    pad = hop * round(pad_ms * 1e-3 * w.rate / hop)
    start = max(0, onset - pad)
    end = min(len(w), tail + pad)
    return Waveform(w.samples[start:end].copy(), w.rate)
