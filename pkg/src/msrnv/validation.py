"""Input validation helpers shared by the estimator API."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .audio import Waveform
from .features import MelSpectrogram


def ensure_waveform(obj, name: str = "X") -> Waveform:
    """Accept a Waveform or a (samples, rate) pair."""
    if isinstance(obj, Waveform):
        return obj
    if isinstance(obj, tuple) and len(obj) == 2:
        samples, rate = obj
        return Waveform(np.asarray(samples), int(rate))
    raise TypeError(
        f"{name} must be a Waveform or a (samples, rate) tuple, "
        f"got {type(obj).__name__}"
    )


def ensure_waveform_list(X, name: str = "X") -> list[Waveform]:
    if isinstance(X, Waveform) or (isinstance(X, tuple) and len(X) == 2):
        return [ensure_waveform(X, name)]
    if isinstance(X, Sequence):
        if len(X) == 0:
            raise ValueError(f"{name} is empty")
        return [ensure_waveform(item, f"{name}[{i}]") for i, item in enumerate(X)]
    raise TypeError(f"{name} must be a Waveform or a sequence of them")


def ensure_mel(obj, template: MelSpectrogram | None = None, name: str = "X") -> MelSpectrogram:
    """Accept a MelSpectrogram, or a (frames, bands) array when a template
    supplies the analysis metadata."""
    if isinstance(obj, MelSpectrogram):
        return obj
    arr = np.asarray(obj)
    if arr.ndim == 2:
        if template is None:
            raise TypeError(
                f"{name}: bare arrays need analysis metadata; pass a MelSpectrogram"
            )
        return MelSpectrogram(
            arr.astype(np.float32),
            template.hop_seconds,
            template.band_lo,
            template.band_hi,
            template.source_rate,
        )
    raise TypeError(f"{name} must be a MelSpectrogram or a 2-D array")


def ensure_mel_list(X, template: MelSpectrogram | None = None, name: str = "X"):
    if isinstance(X, MelSpectrogram) or (
        isinstance(X, np.ndarray) and X.ndim == 2
    ):
        return [ensure_mel(X, template, name)], True
    if isinstance(X, Sequence) and len(X) > 0:
        return (
            [ensure_mel(item, template, f"{name}[{i}]") for i, item in enumerate(X)],
            False,
        )
    raise TypeError(f"{name} must be a MelSpectrogram, 2-D array, or sequence of them")
