"""Per-rate discriminators, spectral losses, and the composite objectives.

The adversarial objective is least-squares: the generator drives
discriminator scores toward 1 on generated audio; the discriminator drives
real scores toward 1 and generated scores toward 0. Targets for every rate
are the natural waveform anti-alias-downsampled in advance, never pooled
inside the discriminator, so high-band detail stays visible to it.

Stage terms accumulate in ladder order (left fold), so the total for stages
1..J equals the total for 1..J-1 plus stage J's contribution exactly, and a
zero adversarial weight reproduces the pure spectral objective bit for bit.
Per-stage losses average over the items that carry that stage, which keeps
mixed-availability batches additive per item.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .audio import Waveform
from .errors import TrainingDiverged
from .nn import Conv1d, Module
from .resample import RateLadder, downsample_antialias


@dataclass(frozen=True)
class DiscriminatorSpec:
    layers: int = 10
    channels: int = 64
    kernel: int = 3
    leaky_alpha: float = 0.2


class StageDiscriminator(Module):
    """Fully convolutional critic emitting one score per sample position.

    Dilated convolutions with linearly increasing dilation in the middle
    layers, leaky-ReLU activations, and a final linear projection to one
    channel. Unconditional (no feature input).
    """

    def __init__(
        self,
        rate: int,
        spec: DiscriminatorSpec = DiscriminatorSpec(),
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.rate = rate
        self.spec = spec
        self.convs: list[Conv1d] = []
        for i in range(spec.layers):
            first, last = i == 0, i == spec.layers - 1
            conv = Conv1d(
                1 if first else spec.channels,
                1 if last else spec.channels,
                spec.kernel,
                dilation=1 if (first or last) else i,
                rng=rng,
                dtype=dtype,
            )
            self.convs.append(conv)
            self.register_child(f"conv{i}", conv)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = ag.leaky_relu(h, self.spec.leaky_alpha)
        return h

    def score(self, w: Waveform) -> np.ndarray:
        if w.rate != self.rate:
            raise ValueError(f"discriminator expects {self.rate} Hz, got {w.rate}")
        return self(Tensor(w.samples.reshape(1, 1, -1))).data[0, 0]


def build_discriminators(
    ladder: RateLadder,
    spec: DiscriminatorSpec = DiscriminatorSpec(),
    seed: int = 0,
    dtype=np.float32,
) -> list[StageDiscriminator]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return [StageDiscriminator(rate, spec, rng, dtype) for rate in ladder]


def make_targets(w: Waveform, ladder: RateLadder) -> list[Waveform]:
    """Anti-aliased target waveform per ladder rate (top rate passes through)."""
    targets = []
    for rate in ladder:
        if rate == w.rate:
            targets.append(Waveform(w.samples.copy(), rate))
        elif rate < w.rate:
            targets.append(downsample_antialias(w, rate))
        else:
            raise ValueError(
                f"ladder rate {rate} above the material's native rate {w.rate}"
            )
    return targets


@dataclass(frozen=True)
class STFTResolutionSet:
    """Spectral-loss analysis triples (fft, win, hop), defined at a reference
    rate and rescaled per stage rate (nearest even, floor 8)."""

    base: tuple[tuple[int, int, int], ...] = (
        (2048, 1200, 240),
        (4096, 2400, 480),
        (1024, 480, 100),
    )
    reference_rate: int = 48000

    def for_rate(self, rate: int) -> tuple[tuple[int, int, int], ...]:
        scale = rate / self.reference_rate
        out = []
        for fft, win, hop in self.base:
            fft_r = max(8, 2 * int(np.floor(fft * scale / 2 + 0.5)))
            win_r = min(fft_r, max(8, 2 * int(np.floor(win * scale / 2 + 0.5))))
            hop_r = max(8, 2 * int(np.floor(hop * scale / 2 + 0.5)))
            out.append((fft_r, win_r, hop_r))
        return tuple(out)


_window_cache: dict[tuple[int, int], np.ndarray] = {}


def _loss_window(fft: int, win: int) -> np.ndarray:
    key = (fft, win)
    cached = _window_cache.get(key)
    if cached is None:
        w = np.zeros(fft)
        off = (fft - win) // 2
        w[off : off + win] = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
        _window_cache[key] = cached = w
    return cached


def stft_loss_terms(
    x: Tensor | np.ndarray,
    y: np.ndarray,
    resolutions: Sequence[tuple[int, int, int]],
) -> tuple[Tensor, Tensor]:
    """Spectral-convergence and log-magnitude terms, each averaged over the
    analysis resolutions.

    Convergence is the Frobenius distance between magnitude spectrograms
    normalized by the reference's norm; the magnitude term is the mean L1
    distance of log magnitudes.
    """
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    y = np.asarray(y)
    if x.data.shape != y.shape:
        raise ValueError(f"length mismatch: generated {x.data.shape} vs {y.shape}")
    sc_sum: Tensor | None = None
    mag_sum: Tensor | None = None
    for fft, win, hop in resolutions:
        window = _loss_window(fft, win)
        mx = ag.stft_magnitude(x, fft, hop, window)
        my = ag.stft_magnitude(Tensor(y), fft, hop, window)
        ref_norm = float(np.sqrt(np.sum(np.square(my.data))))
        sc = ag.div_scalar(ag.sqrt(ag.sum_all(ag.square(my - mx))), ref_norm)
        mag = ag.mean_all(ag.absolute(ag.log(mx) - ag.log(my)))
        sc_sum = sc if sc_sum is None else sc_sum + sc
        mag_sum = mag if mag_sum is None else mag_sum + mag
    return ag.div_scalar(sc_sum, len(resolutions)), ag.div_scalar(
        mag_sum, len(resolutions)
    )


def mr_stft_loss(
    x: Tensor | np.ndarray,
    y: np.ndarray,
    resolutions: Sequence[tuple[int, int, int]],
) -> Tensor:
    """Multi-resolution spectral loss: convergence + log-magnitude terms."""
    sc, mag = stft_loss_terms(x, y, resolutions)
    return sc + mag


def _batch_spectral_loss(
    x: Tensor, y: np.ndarray, resolutions: Sequence[tuple[int, int, int]]
) -> Tensor:
    """Per-item spectral loss vector (n,) for a batch of equal-length signals.

    FFT rows are transformed independently, so each row's value matches
    :func:`mr_stft_loss` on that row alone (up to reduction rounding order)
    and batching preserves per-item additivity.
    """
    sc_sum: Tensor | None = None
    mag_sum: Tensor | None = None
    for fft, win, hop in resolutions:
        window = _loss_window(fft, win)
        mx = ag.stft_magnitude(x, fft, hop, window)  # (n, frames, bins)
        my = ag.stft_magnitude(Tensor(y), fft, hop, window)
        ref_norm = np.sqrt(np.sum(np.square(my.data), axis=(1, 2)))
        sc = ag.div_scalar(ag.sqrt(ag.sum_axes(ag.square(my - mx), (1, 2))), ref_norm)
        mag = ag.mean_axes(ag.absolute(ag.log(mx) - ag.log(my)), (1, 2))
        sc_sum = sc if sc_sum is None else sc_sum + sc
        mag_sum = mag if mag_sum is None else mag_sum + mag
    return ag.div_scalar(sc_sum + mag_sum, len(resolutions))


@dataclass
class StageLossRecord:
    aux: float
    adv: float | None = None
    dis: float | None = None


def _check_finite(value: float, stage: int, term: str) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"stage {stage} {term} loss is non-finite")


def generator_loss(
    outputs: Sequence[Tensor],
    targets: Sequence[np.ndarray],
    resolutions: Sequence[Sequence[tuple[int, int, int]]],
    discriminators: Sequence[StageDiscriminator] | None = None,
    lambda_adv: float = 0.0,
    J: int | None = None,
) -> tuple[Tensor, list[StageLossRecord]]:
    """Composite generator objective summed over stages 1..J.

    ``outputs[i]`` is (n_i, 1, T_i); ``targets[i]`` is (n_i, T_i). Spectral
    terms are computed per item and averaged over the stage's n_i items; the
    adversarial term (only when ``lambda_adv`` is nonzero) is the mean squared
    distance of the discriminator's scores from 1.
    """
    stop = len(outputs) if J is None else J
    if not 1 <= stop <= len(outputs):
        raise ValueError(f"J must be in [1, {len(outputs)}], got {stop}")
    total: Tensor | None = None
    records: list[StageLossRecord] = []
    for i in range(stop):
        x, y = outputs[i], np.asarray(targets[i])
        n_items = x.shape[0]
        if y.shape != (n_items, x.shape[-1]):
            raise ValueError(
                f"stage {i + 1}: target shape {y.shape} does not match "
                f"output ({n_items}, {x.shape[-1]})"
            )
        per_item = _batch_spectral_loss(
            ag.reshape(x, (n_items, x.shape[-1])), y, resolutions[i]
        )
        aux = ag.mean_all(per_item)
        _check_finite(aux.item(), i + 1, "spectral")
        record = StageLossRecord(aux=aux.item())
        stage_total = aux
        if lambda_adv != 0.0:
            if discriminators is None:
                raise ValueError("lambda_adv != 0 requires discriminators")
            scores = discriminators[i](x)
            adv = ag.mean_all(ag.square(scores - 1.0))
            _check_finite(adv.item(), i + 1, "adversarial")
            record.adv = adv.item()
            stage_total = stage_total + lambda_adv * adv
        total = stage_total if total is None else total + stage_total
        records.append(record)
    return total, records


def discriminator_loss(
    targets: Sequence[np.ndarray],
    outputs: Sequence[Tensor],
    discriminators: Sequence[StageDiscriminator],
    J: int | None = None,
) -> tuple[Tensor, list[float]]:
    """Least-squares critic objective summed over stages 1..J.

    Generated audio is detached, so no gradient reaches the generator.
    """
    stop = len(outputs) if J is None else J
    if not 1 <= stop <= len(outputs):
        raise ValueError(f"J must be in [1, {len(outputs)}], got {stop}")
    total: Tensor | None = None
    per_stage: list[float] = []
    for i in range(stop):
        fake = outputs[i].detach()
        y = np.asarray(targets[i])
        real = Tensor(y.reshape(y.shape[0], 1, y.shape[-1]))
        d = discriminators[i]
        real_term = ag.mean_all(ag.square(d(real) - 1.0))
        fake_term = ag.mean_all(ag.square(d(fake)))
        stage = real_term + fake_term
        _check_finite(stage.item(), i + 1, "discriminator")
        per_stage.append(stage.item())
        total = stage if total is None else total + stage
    return total, per_stage
