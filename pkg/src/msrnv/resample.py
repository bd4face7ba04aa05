"""Rational-ratio resampling with Kaiser-windowed sinc kernels.

Upsampling conceptually zero-stuffs by L, low-pass filters at the
intermediate rate, and keeps every M-th sample; the implementation is
polyphase, so only needed products are formed. The same kernel family
serves anti-aliased decimation.

The map x -> resample(x) is linear, and with a symmetric odd-length
kernel its exact transpose is the same polyphase pass with L and M
swapped (:meth:`ResamplePlan.adjoint`). That property is what makes
upsampling usable inside a differentiable graph.

Filter placement: the transition band occupies the top 10% below the
Nyquist of the slower rate (passband edge at 0.90, -6 dB cutoff at 0.95,
stopband edge at 1.00 of that Nyquist), with 80 dB stopband attenuation.
Putting the stopband edge exactly at the Nyquist boundary is what keeps
imaging/aliasing leakage below the -60 dB oracles; the kernel length then
follows from the Kaiser formula (about 48 sinc zero crossings per side)
rather than being fixed a priori.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import Waveform
from .errors import FilterDesignError

CUTOFF_SCALE = 0.95      # -6 dB point, fraction of the slower rate's Nyquist
TRANSITION_SCALE = 0.10  # transition width, fraction of that Nyquist
STOPBAND_DB = 80.0
MAX_RATIO_TERM = 1024    # largest supported L or M after reduction
_MAX_TAPS = 1 << 21


@dataclass(frozen=True)
class FilterKernel:
    """Linear-phase FIR prototype: odd-length symmetric taps, unit DC gain."""

    taps: np.ndarray
    cutoff: float  # normalized frequency, cycles/sample in (0, 0.5]
    design: dict

    def __post_init__(self) -> None:
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise FilterDesignError("kernel taps must be a 1-D odd-length array")
        if not np.allclose(taps, taps[::-1], atol=1e-12):
            raise FilterDesignError("kernel taps must be symmetric (linear phase)")
        object.__setattr__(self, "taps", taps)

    @property
    def half_length(self) -> int:
        return (len(self.taps) - 1) // 2


def kaiser_beta(atten_db: float) -> float:
    """Kaiser window shape parameter for a given stopband attenuation."""
    if atten_db > 50.0:
        return 0.1102 * (atten_db - 8.7)
    if atten_db >= 21.0:
        return 0.5842 * (atten_db - 21.0) ** 0.4 + 0.07886 * (atten_db - 21.0)
    return 0.0


def design_lowpass(
    cutoff: float,
    transition_width: float,
    stopband_atten_db: float = STOPBAND_DB,
) -> FilterKernel:
    """Design a linear-phase Kaiser-windowed sinc low-pass.

    ``cutoff`` is the -6 dB point and ``transition_width`` the full
    passband-to-stopband width, both in normalized frequency
    (cycles/sample). The measured stopband rejection meets or exceeds
    ``stopband_atten_db``.
    """
    if not 0.0 < cutoff < 0.5:
        raise FilterDesignError(f"cutoff must be in (0, 0.5), got {cutoff}")
    if transition_width <= 0:
        raise FilterDesignError("transition_width must be positive")
    if stopband_atten_db < 40.0:
        raise FilterDesignError("stopband attenuation below 40 dB is not supported")
    # the Kaiser length formula is an estimate; 3 dB of margin keeps the
    # measured rejection at or above the requested figure
    design_db = stopband_atten_db + 3.0
    beta = kaiser_beta(design_db)
    n = (design_db - 7.95) / (2.285 * 2.0 * math.pi * transition_width)
    half = int(math.ceil(n / 2.0))
    if 2 * half + 1 > _MAX_TAPS:
        raise FilterDesignError(
            f"transition width {transition_width} needs {2 * half + 1} taps "
            f"(budget {_MAX_TAPS})"
        )
    k = np.arange(-half, half + 1, dtype=np.float64)
    taps = 2.0 * cutoff * np.sinc(2.0 * cutoff * k) * np.kaiser(2 * half + 1, beta)
    taps /= taps.sum()
    zero_crossings = 2.0 * cutoff * half
    return FilterKernel(
        taps,
        cutoff,
        {
            "window_kind": "kaiser",
            "beta": beta,
            "num_zero_crossings": zero_crossings,
            "stopband_atten_db": stopband_atten_db,
        },
    )


@lru_cache(maxsize=64)
def _prototype(max_term: int) -> FilterKernel:
    """Shared prototype for a reduced ratio whose larger term is ``max_term``."""
    nyq = 0.5 / max_term  # slower rate's Nyquist at the intermediate rate
    return design_lowpass(CUTOFF_SCALE * nyq, TRANSITION_SCALE * nyq, STOPBAND_DB)


class ResamplePlan:
    """Precomputed polyphase decomposition for one reduced ratio L/M."""

    def __init__(self, up: int, down: int, kernel: FilterKernel, gain: float):
        self.up = up
        self.down = down
        self.kernel = kernel
        self.gain = gain
        half = kernel.half_length
        taps = kernel.taps * gain
        self.phase_taps: list[np.ndarray] = []
        self.phase_start: list[int] = []
        for phase in range(up):
            k0 = (half - phase * down) % up
            self.phase_taps.append(np.ascontiguousarray(taps[k0::up]))
            self.phase_start.append((phase * down - half + k0) // up)
        self._taps_cache: dict[np.dtype, list[np.ndarray]] = {}
        self._adjoint: ResamplePlan | None = None

    def out_len(self, in_len: int) -> int:
        return int(math.floor(in_len * self.up / self.down + 0.5))

    def adjoint(self) -> "ResamplePlan":
        """Exact transpose of this plan as a linear map (symmetric kernel)."""
        if self._adjoint is None:
            self._adjoint = ResamplePlan(self.down, self.up, self.kernel, self.gain)
            self._adjoint._adjoint = self
        return self._adjoint

    def _taps_as(self, dtype: np.dtype) -> list[np.ndarray]:
        cached = self._taps_cache.get(dtype)
        if cached is None:
            cached = [t.astype(dtype) for t in self.phase_taps]
            self._taps_cache[dtype] = cached
        return cached

    def apply(self, x: np.ndarray, out_len: int | None = None) -> np.ndarray:
        """Resample along the last axis; indices outside the input read zero."""
        x = np.asarray(x)
        n = x.shape[-1]
        if out_len is None:
            out_len = self.out_len(n)
        out = np.zeros(x.shape[:-1] + (out_len,), dtype=x.dtype)
        if out_len == 0 or n == 0:
            return out
        taps = self._taps_as(x.dtype)
        counts = [(out_len - phase + self.up - 1) // self.up for phase in range(self.up)]
        lo = min(
            self.phase_start[p] for p in range(self.up) if counts[p] > 0
        )
        hi = max(
            self.phase_start[p] + (counts[p] - 1) * self.down + len(taps[p]) - 1
            for p in range(self.up)
            if counts[p] > 0
        )
        pad_left = max(0, -lo)
        pad_right = max(0, hi - (n - 1))
        xp = np.zeros(x.shape[:-1] + (n + pad_left + pad_right,), dtype=x.dtype)
        xp[..., pad_left : pad_left + n] = x
        flat = xp.reshape(-1, xp.shape[-1])
        out_flat = out.reshape(-1, out_len)
        for phase in range(self.up):
            cnt = counts[phase]
            if cnt == 0:
                continue
            width = len(taps[phase])
            windows = sliding_window_view(flat, width, axis=-1)
            start = self.phase_start[phase] + pad_left
            sel = windows[:, start : start + cnt * self.down : self.down, :]
            out_flat[:, phase :: self.up] = sel @ taps[phase]
        return out


@lru_cache(maxsize=256)
def resample_plan(src_rate: int, dst_rate: int) -> ResamplePlan:
    """Plan for converting ``src_rate`` to ``dst_rate`` (both in Hz)."""
    if src_rate <= 0 or dst_rate <= 0:
        raise ValueError("rates must be positive")
    ratio = Fraction(dst_rate, src_rate)
    up, down = ratio.numerator, ratio.denominator
    if max(up, down) > MAX_RATIO_TERM:
        raise ValueError(
            f"ratio {dst_rate}/{src_rate} reduces to {up}/{down}; "
            f"terms above {MAX_RATIO_TERM} are not supported"
        )
    return ResamplePlan(up, down, _prototype(max(up, down)), gain=float(up))


def resample_array(
    x: np.ndarray, src_rate: int, dst_rate: int, out_len: int | None = None
) -> np.ndarray:
    """Resample along the last axis; identity (copy) when rates match."""
    if src_rate == dst_rate:
        x = np.asarray(x)
        if out_len is None or out_len == x.shape[-1]:
            return x.copy()
        out = np.zeros(x.shape[:-1] + (out_len,), dtype=x.dtype)
        keep = min(out_len, x.shape[-1])
        out[..., :keep] = x[..., :keep]
        return out
    return resample_plan(src_rate, dst_rate).apply(x, out_len)


def upsample_sinc(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited upsampling; output length = round(len * target/source)."""
    if target_rate < w.rate:
        raise ValueError(
            f"target rate {target_rate} below source {w.rate}; use downsample_antialias"
        )
    return Waveform(resample_array(w.samples, w.rate, target_rate), target_rate)


def downsample_antialias(w: Waveform, target_rate: int) -> Waveform:
    """Low-pass to the target Nyquist, then decimate."""
    if target_rate > w.rate:
        raise ValueError(
            f"target rate {target_rate} above source {w.rate}; use upsample_sinc"
        )
    return Waveform(resample_array(w.samples, w.rate, target_rate), target_rate)


def band_energy_fraction(w: Waveform, f_lo: float, f_hi: float) -> float:
    """Fraction of (Hann-windowed) periodogram energy inside [f_lo, f_hi]."""
    nyq = w.rate / 2.0
    if not 0.0 <= f_lo < f_hi <= nyq + 1e-9:
        raise ValueError(f"band [{f_lo}, {f_hi}] invalid for Nyquist {nyq}")
    x = np.asarray(w.samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size))) ** 2
    total = spec.sum()
    if total <= 0.0:
        raise ValueError("zero-energy signal")
    freqs = np.fft.rfftfreq(x.size, d=1.0 / w.rate)
    band = (freqs >= f_lo) & (freqs <= f_hi)
    return float(spec[band].sum() / total)


def passband_edge_hz(src_rate: int, dst_rate: int) -> float:
    """Highest frequency preserved within passband ripple for this conversion."""
    return (CUTOFF_SCALE - TRANSITION_SCALE / 2.0) * min(src_rate, dst_rate) / 2.0


@dataclass(frozen=True)
class RateLadder:
    """Strictly ascending sampling rates f_1 < ... < f_I, in Hz."""

    rates: tuple[int, ...]

    def __init__(self, rates: Sequence[int]):
        rates = tuple(int(r) for r in rates)
        if len(rates) < 1:
            raise ValueError("ladder needs at least one rate")
        if any(r <= 0 for r in rates):
            raise ValueError("rates must be positive")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"rates must be strictly ascending, got {rates}")
        for a, b in zip(rates, rates[1:]):
            frac = Fraction(b, a)
            if max(frac.numerator, frac.denominator) > 64:
                raise ValueError(
                    f"adjacent ratio {b}/{a} = {frac} has terms above 64"
                )
        object.__setattr__(self, "rates", rates)

    def __len__(self) -> int:
        return len(self.rates)

    def __iter__(self):
        return iter(self.rates)

    def __getitem__(self, i: int) -> int:
        return self.rates[i]

    @property
    def top_rate(self) -> int:
        return self.rates[-1]

    def index_of(self, rate: int) -> int:
        try:
            return self.rates.index(rate)
        except ValueError:
            raise ValueError(f"rate {rate} is not in ladder {self.rates}") from None

    def max_stage_for(self, native_rate: int) -> int:
        """Number of stages usable with data recorded at ``native_rate``."""
        usable = sum(1 for r in self.rates if r <= native_rate)
        if usable == 0:
            raise ValueError(
                f"native rate {native_rate} is below the lowest ladder rate "
                f"{self.rates[0]}"
            )
        return usable
