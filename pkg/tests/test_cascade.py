import numpy as np
import pytest

from msrnv import autograd as ag
from msrnv.autograd import Tensor, grad_check
from msrnv.cascade import (
    GeneratorSpec,
    build_baseline,
    build_cascade,
    cascade_multiplies_per_second,
    count_parameters,
    stage_multiplies_per_sample,
    stage_parameter_count,
)
from msrnv.features import MelSpectrogram
from msrnv.nn import Conv1d
from msrnv.resample import RateLadder, band_energy_fraction, resample_plan

PAPER_LADDER = (1000, 2000, 4000, 8000, 16000, 24000, 48000)
TINY = GeneratorSpec(layers=2, cycle=2, residual_channels=4)


def _mel(frames, bands=6, hop_s=0.005, rate=8000, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return MelSpectrogram(
        (scale * rng.standard_normal((frames, bands))).astype(np.float32),
        hop_s, 80.0, 3800.0, rate,
    )


class TestStageForward:
    def test_zero_init_output_zero(self, rng):
        cascade = build_cascade((1000, 2000), cond_channels=6, spec=TINY, seed=0)
        stage = cascade.stages[1]
        x = Tensor(rng.standard_normal((1, 1, 40)).astype(np.float32))
        cond = Tensor(rng.standard_normal((1, 6, 40)).astype(np.float32))
        assert np.all(stage(x, cond).data == 0.0)

    @pytest.mark.parametrize("length", [100, 240, 24000])
    def test_length_preserved(self, rng, length):
        cascade = build_cascade((1000,), cond_channels=4, spec=TINY, seed=0)
        x = Tensor(rng.standard_normal((1, 1, length)).astype(np.float32))
        cond = Tensor(rng.standard_normal((1, 4, length)).astype(np.float32))
        assert cascade.stages[0](x, cond).shape == (1, 1, length)

    def test_length_mismatch_raises(self, rng):
        cascade = build_cascade((1000,), cond_channels=4, spec=TINY, seed=0)
        with pytest.raises(ValueError):
            cascade.stages[0](
                Tensor(rng.standard_normal((1, 1, 10)).astype(np.float32)),
                Tensor(rng.standard_normal((1, 4, 11)).astype(np.float32)),
            )

    def test_stage_gradient_vs_finite_differences(self, rng):
        cascade = build_cascade(
            (1000,), cond_channels=3,
            spec=GeneratorSpec(layers=2, cycle=2, residual_channels=3),
            seed=1, dtype=np.float64,
        )
        stage = cascade.stages[0]
        stage.net.head_out.weight.data = (
            rng.standard_normal(stage.net.head_out.weight.shape) * 0.3
        )
        x = Tensor.param(rng.standard_normal((1, 1, 10)))
        cond = Tensor(rng.standard_normal((1, 3, 10)))
        probe = rng.standard_normal((1, 1, 10))

        def f(*tensors):
            return ag.mean_all(stage(x, cond) * Tensor(probe))

        assert grad_check(f, stage.parameters() + [x]) < 1e-3


class TestCascadeSynthesis:
    def test_lengths_half_second(self):
        cascade = build_cascade((1000, 2000, 4000, 8000), cond_channels=6, spec=TINY)
        result = cascade.synthesize(_mel(100), duration_s=0.5)
        assert [len(w) for w in result.waveforms] == [500, 1000, 2000, 4000]
        assert [w.rate for w in result.waveforms] == [1000, 2000, 4000, 8000]

    def test_zero_residual_stages_are_pure_upsampling(self):
        cascade = build_cascade((1000, 2000, 4000, 8000), cond_channels=6, spec=TINY, seed=5)
        g = np.random.default_rng(7)
        head = cascade.stages[0].net.head_out
        head.weight.data = (0.5 * g.standard_normal(head.weight.shape)).astype(np.float32)
        result = cascade.synthesize(_mel(100), duration_s=0.5, noise_seed=3)
        x1 = result.waveforms[0]
        assert np.abs(x1.samples).max() > 0
        # later stages add exactly zero, so each output is the chained
        # upsampling of stage 1 and carries no content above its Nyquist
        chained = x1.samples.astype(np.float32)
        for i, rate in enumerate((2000, 4000, 8000), start=1):
            plan = resample_plan(rate // 2, rate)
            chained = plan.apply(chained, result.waveforms[i].samples.size)
            assert np.allclose(result.waveforms[i].samples, chained, atol=1e-6)
            frac = band_energy_fraction(result.waveforms[i], 500.0, rate / 2.0)
            assert 10 * np.log10(frac) < -50.0

    def test_paper_ladder_accepted(self):
        cascade = build_cascade(PAPER_LADDER, cond_channels=80, spec=GeneratorSpec())
        assert len(cascade.stages) == 7
        assert cascade.stages[-1].out_rate == 48000

    def test_deterministic_given_seed(self):
        cascade = build_cascade((1000, 2000), cond_channels=6, spec=TINY, seed=2)
        a = cascade.synthesize(_mel(60), noise_seed=11)
        b = cascade.synthesize(_mel(60), noise_seed=11)
        for wa, wb in zip(a.waveforms, b.waveforms):
            assert np.array_equal(wa.samples, wb.samples)

    def test_upto_stops_early(self):
        cascade = build_cascade((1000, 2000, 4000), cond_channels=6, spec=TINY)
        result = cascade.synthesize(_mel(60), upto=2000)
        assert [w.rate for w in result.waveforms] == [1000, 2000]
        with pytest.raises(ValueError):
            cascade.synthesize(_mel(60), upto=3000)

    def test_decimation_consistency_with_zero_residual(self):
        # with zero residuals x_i is up(x_{i-1}); decimating back recovers
        # x_{i-1} within filter accuracy for passband-limited content
        from msrnv.audio import Waveform
        from msrnv.resample import downsample_antialias, upsample_sinc

        rng = np.random.default_rng(0)
        t = np.arange(2000) / 1000.0
        x1 = (
            0.5 * np.sin(2 * np.pi * 130 * t)
            + 0.3 * np.sin(2 * np.pi * 260 * t + 0.7)
            + 0.1 * np.sin(2 * np.pi * 390 * t + 1.3)
        )
        x2 = upsample_sinc(Waveform(x1, 1000), 2000)
        back = downsample_antialias(x2, 1000)
        assert np.max(np.abs(back.samples[300:-300] - x1[300:-300])) < 1e-3


class TestParameterCounts:
    def test_single_conv_hand_count(self):
        conv = Conv1d(2, 4, kernel=3, zero_init=True)
        assert count_parameters(conv) == 4 * 2 * 3 + 4  # 28

    def test_closed_form_matches_modules(self):
        for spec, cond in [
            (GeneratorSpec(), 80),
            (GeneratorSpec(layers=5, cycle=5, residual_channels=16), 80),
            (TINY, 6),
        ]:
            cascade = build_cascade((1000,), cond_channels=cond, spec=spec)
            assert count_parameters(cascade.stages[0]) == stage_parameter_count(spec, cond)

    def test_paper_cascade_total(self):
        cascade = build_cascade(PAPER_LADDER, cond_channels=80, spec=GeneratorSpec())
        total = count_parameters(cascade)
        assert total == sum(count_parameters(s) for s in cascade.stages)
        assert abs(total - 3.06e6) / 3.06e6 < 0.15

    def test_baseline_total(self):
        baseline = build_baseline(48000, cond_channels=80)
        total = count_parameters(baseline)
        assert abs(total - 1.44e6) / 1.44e6 < 0.15

    def test_single_stage_ladder_equals_baseline(self):
        deep = GeneratorSpec(layers=30, cycle=10, residual_channels=64)
        as_cascade = build_cascade((48000,), cond_channels=80, spec=deep)
        baseline = build_baseline(48000, cond_channels=80)
        assert count_parameters(as_cascade) == count_parameters(baseline)
        assert baseline.stages[0].net.dilations == as_cascade.stages[0].net.dilations


class TestComputeLaw:
    def test_multiply_count_proportional_to_rate(self):
        cascade = build_cascade(PAPER_LADDER, cond_channels=80, spec=GeneratorSpec())
        per_sample = stage_multiplies_per_sample(GeneratorSpec(), 80)
        expected = per_sample * sum(PAPER_LADDER)
        assert cascade_multiplies_per_second(cascade) == expected

    def test_cascade_cheaper_than_deep_baseline(self):
        cascade = build_cascade(PAPER_LADDER, cond_channels=80, spec=GeneratorSpec())
        baseline = build_baseline(48000, cond_channels=80)
        c = cascade_multiplies_per_second(cascade)
        b = cascade_multiplies_per_second(baseline)
        # layer-rate products: 10 * (1+2+4+8+16+24+48) kHz vs 30 * 48 kHz
        assert 10 * sum(PAPER_LADDER) == 1_030_000
        assert 30 * 48000 == 1_440_000
        assert c / b == pytest.approx(1030 / 1440, rel=0.02)
