"""Staged waveform generation over an ascending rate ladder.

Stage 1 maps seeded white noise plus conditioning to the lowest-rate
waveform. Every later stage sinc-upsamples the previous waveform to its own
rate and adds a network-predicted residual, so with all residual heads at
their zero init the cascade degenerates to pure sinc upsampling of stage 1.
A one-rate ladder with a deep stack is the conventional single-rate vocoder.

A built cascade is immutable during inference; concurrent synthesis calls
with independent noise seeds are safe. Stages run sequentially (data
dependency); parallelism lives inside the array kernels.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .features import ConditioningSeries, MelSpectrogram, upsample_features
from .nn import Module, WaveNet
from .resample import RateLadder, resample_plan
from .audio import Waveform


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape of one stage network."""

    layers: int = 10
    cycle: int = 10  # dilation schedule 2^(l mod cycle)
    residual_channels: int = 64
    kernel: int = 3


class StageGenerator(Module):
    """One rung of the ladder: predicts the residual band at ``out_rate``.

    Stage 1 has no input waveform; its single input channel carries white
    noise. Later stages receive the upsampled previous waveform instead.
    """

    def __init__(
        self,
        index: int,
        in_rate: int | None,
        out_rate: int,
        cond_channels: int,
        spec: GeneratorSpec,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        super().__init__()
        self.index = index
        self.in_rate = in_rate
        self.out_rate = out_rate
        self.spec = spec
        self.net = self.register_child(
            "net",
            WaveNet(
                in_channels=1,
                cond_channels=cond_channels,
                residual_channels=spec.residual_channels,
                layers=spec.layers,
                cycle=spec.cycle,
                kernel=spec.kernel,
                rng=rng,
                dtype=dtype,
            ),
        )

    def __call__(self, x_in: Tensor, cond: Tensor) -> Tensor:
        if x_in.shape[-1] != cond.shape[-1]:
            raise ValueError(
                f"stage {self.index}: waveform length {x_in.shape[-1]} != "
                f"conditioning length {cond.shape[-1]}"
            )
        return self.net(x_in, cond)


@dataclass
class SynthesisResult:
    waveforms: list[Waveform]  # one per ladder rate up to the requested stop
    stage_seconds: list[float]


class GeneratorCascade(Module):
    """Ordered stage generators sharing one rate ladder."""

    def __init__(
        self,
        ladder: RateLadder,
        cond_channels: int,
        spec: GeneratorSpec,
        seed: int = 0,
        dtype=np.float32,
    ):
        super().__init__()
        self.ladder = ladder
        self.cond_channels = cond_channels
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.stages: list[StageGenerator] = []
        for i, rate in enumerate(ladder):
            stage = StageGenerator(
                i + 1,
                ladder[i - 1] if i > 0 else None,
                rate,
                cond_channels,
                spec,
                rng,
                dtype,
            )
            self.stages.append(stage)
            self.register_child(f"stage{i + 1}", stage)

    # -- training-facing forward ------------------------------------------------

    def forward_stages(
        self,
        noise: Tensor,
        conds: Sequence[Tensor],
        counts: Sequence[int] | None = None,
    ) -> list[Tensor]:
        """Run stages 1..len(conds); returns one (n_i, 1, T_i) tensor per stage.

        ``counts`` restricts stage i to the first ``counts[i]`` batch rows
        (rows must be ordered so participation is a prefix), which is how
        batches mixing different usable-stage counts share one pass.
        """
        if not conds:
            raise ValueError("need conditioning for at least one stage")
        outputs: list[Tensor] = []
        x = None
        for i, cond in enumerate(conds):
            n_i = counts[i] if counts is not None else noise.shape[0]
            if i == 0:
                x = noise
                if x.shape[0] != n_i:
                    x = ag.narrow(x, 0, 0, n_i)
            else:
                prev = outputs[-1]
                if prev.shape[0] != n_i:
                    prev = ag.narrow(prev, 0, 0, n_i)
                plan = resample_plan(self.ladder[i - 1], self.ladder[i])
                x = ag.resample(prev, plan, out_len=cond.shape[-1])
            residual = self.stages[i](x, cond)
            outputs.append(x + residual if i > 0 else residual)
        return outputs

    # -- inference ----------------------------------------------------------------

    def synthesize(
        self,
        mel: MelSpectrogram,
        duration_s: float | None = None,
        upto: int | None = None,
        noise_seed: int = 0,
    ) -> SynthesisResult:
        """Generate every intermediate waveform for rates <= ``upto``.

        Lengths follow round(duration * rate) per stage. Deterministic for a
        fixed seed.
        """
        if duration_s is None:
            duration_s = mel.duration_seconds
        stop = len(self.ladder) if upto is None else self.ladder.index_of(upto) + 1
        lengths = [round(duration_s * rate) for rate in self.ladder[:stop]]
        rng = np.random.default_rng(np.random.SeedSequence([noise_seed]))
        noise = Tensor(
            rng.standard_normal(lengths[0], dtype=np.float32)
            .astype(self.dtype)
            .reshape(1, 1, -1)
        )
        waveforms: list[Waveform] = []
        stage_seconds: list[float] = []
        x = None
        for i in range(stop):
            t0 = _time.perf_counter()
            cond = upsample_features(mel, self.ladder[i], lengths[i])
            cond_t = Tensor(cond.values.astype(self.dtype)[None, :, :])
            if i == 0:
                x = self.stages[0](noise, cond_t)
            else:
                plan = resample_plan(self.ladder[i - 1], self.ladder[i])
                low = ag.resample(x, plan, out_len=lengths[i])
                x = low + self.stages[i](low, cond_t)
            stage_seconds.append(_time.perf_counter() - t0)
            waveforms.append(Waveform(x.data[0, 0].astype(np.float32), self.ladder[i]))
        return SynthesisResult(waveforms, stage_seconds)


def build_cascade(
    ladder: Sequence[int] | RateLadder,
    cond_channels: int = 80,
    spec: GeneratorSpec = GeneratorSpec(),
    seed: int = 0,
    dtype=np.float32,
) -> GeneratorCascade:
    if not isinstance(ladder, RateLadder):
        ladder = RateLadder(ladder)
    return GeneratorCascade(ladder, cond_channels, spec, seed, dtype)


def build_baseline(
    rate: int,
    cond_channels: int = 80,
    layers: int = 30,
    cycle: int = 10,
    residual_channels: int = 64,
    kernel: int = 3,
    seed: int = 0,
    dtype=np.float32,
) -> GeneratorCascade:
    """Conventional single-rate vocoder: a one-stage ladder whose network is a
    deep stack (default 3 cycles of 10 layers) mapping noise + conditioning
    straight to the target rate."""
    spec = GeneratorSpec(layers=layers, cycle=cycle,
                         residual_channels=residual_channels, kernel=kernel)
    return GeneratorCascade(RateLadder([rate]), cond_channels, spec, seed, dtype)


def count_parameters(module: Module) -> int:
    """Exact trainable-scalar count.

    For one stage with residual channels C, conditioning channels A, kernel K
    and L layers the closed form is::

        input 1x1:  Cin*C + C
        per layer:  (2C*C*K + 2C) + 2C*A + 2*(C*C + C)
        head:       (C*C + C) + (C + 1)

    summed over layers and stages (stages share no weights, so a cascade's
    count is the sum of its stages').
    """
    return module.num_parameters()


def stage_parameter_count(
    spec: GeneratorSpec, cond_channels: int, in_channels: int = 1
) -> int:
    """Closed-form count matching :func:`count_parameters` for one stage."""
    c, k, a = spec.residual_channels, spec.kernel, cond_channels
    per_layer = (2 * c * c * k + 2 * c) + 2 * c * a + 2 * (c * c + c)
    head = (c * c + c) + (c + 1)
    return (in_channels * c + c) + spec.layers * per_layer + head


def stage_multiplies_per_sample(spec: GeneratorSpec, cond_channels: int) -> int:
    """Multiply count per output sample of one stage network (convolutions
    only; the per-second cost is this times the stage rate)."""
    c, k, a = spec.residual_channels, spec.kernel, cond_channels
    per_layer = 2 * c * c * k + 2 * c * a + 2 * c * c
    return c + spec.layers * per_layer + (c * c + c)


def cascade_multiplies_per_second(cascade: GeneratorCascade) -> float:
    """Closed-form multiply rate of the whole cascade per second of audio;
    proportional to sum(layers * f_i) for fixed channel widths."""
    return float(
        sum(
            stage_multiplies_per_sample(s.spec, cascade.cond_channels) * s.out_rate
            for s in cascade.stages
        )
    )
