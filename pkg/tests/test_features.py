import numpy as np
import pytest

from msrnv.audio import Waveform
from msrnv.errors import AudioFormatError, FeatureLengthError
from msrnv.features import (
    FeatureConfig,
    FeatureStats,
    MelSpectrogram,
    apply_stats,
    extract_logmel,
    fit_stats,
    mel_filterbank,
    read_features,
    read_stats,
    stft_mag,
    upsample_features,
    write_features,
    write_stats,
)

from conftest import sine

PAPER_CFG = FeatureConfig()  # 48 kHz analysis


class TestStftMag:
    def test_zero_signal_all_zero(self):
        out = stft_mag(np.zeros(4096), 1024, 1024, 256)
        assert out.shape[1] == 513
        assert np.all(out == 0.0)

    def test_sine_at_bin_center(self):
        # Hann analysis spreads a tone over a 3-bin main lobe; the center bin
        # dominates and the lobe holds essentially all column energy
        rate, fft = 8000, 256
        bin_idx = 16
        w = sine(bin_idx * rate / fft, rate, 1.0, amp=1.0)
        mag = stft_mag(w, fft, fft, fft // 2)
        power = mag[4:-4] ** 2
        peak = np.argmax(power, axis=1)
        assert np.all(peak == bin_idx)
        lobe = power[:, bin_idx - 1 : bin_idx + 2].sum(axis=1)
        assert np.all(lobe / power.sum(axis=1) > 0.99)

    def test_parseval_within_one_percent(self, rng):
        x = rng.standard_normal(5000)
        fft, win, hop = 512, 512, 128
        mag = stft_mag(x, fft, win, hop)
        # independent framing: same centering convention, explicit windows
        pad = fft // 2
        xp = np.pad(x, pad, mode="reflect")
        window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)
        lhs = []
        rhs = []
        for f in range(mag.shape[0]):
            frame = xp[f * hop : f * hop + fft] * window
            rhs.append(np.sum(frame**2))
            spec2 = mag[f] ** 2
            lhs.append((spec2[0] + spec2[-1] + 2 * spec2[1:-1].sum()) / fft)
        assert np.allclose(lhs, rhs, rtol=0.01)

    def test_short_signal_single_frame(self):
        out = stft_mag(np.ones(10), 64, 64, 16)
        assert out.shape[0] >= 1
        assert np.all(np.isfinite(out))


class TestExtractLogmel:
    def test_frame_count_one_second(self):
        w = Waveform(np.random.default_rng(0).standard_normal(48000).astype(np.float32) * 0.1, 48000)
        mel = extract_logmel(w, PAPER_CFG)
        assert abs(mel.n_frames - 200) <= 1
        assert mel.n_bands == 80
        assert mel.hop_seconds == pytest.approx(0.005)

    def test_silence_hits_log_floor(self):
        w = Waveform(np.zeros(24000, dtype=np.float32), 48000)
        mel = extract_logmel(w, PAPER_CFG)
        assert np.allclose(mel.values, np.log(PAPER_CFG.log_floor))

    def test_tone_peaks_in_matching_band(self):
        w = sine(1000.0, 48000, 1.0, amp=0.8)
        mel = extract_logmel(Waveform(w.samples.astype(np.float32), 48000), PAPER_CFG)
        bank = mel_filterbank(48000, 2048, 80, 80.0, 7600.0)
        tone_bin = round(1000.0 * 2048 / 48000)
        expected_band = int(np.argmax(bank[:, tone_bin]))
        got = int(np.argmax(mel.values.mean(axis=0)))
        assert abs(got - expected_band) <= 1

    def test_rate_mismatch_raises(self):
        w = sine(100.0, 8000, 0.1)
        with pytest.raises(ValueError):
            extract_logmel(w, PAPER_CFG)

    def test_deterministic(self):
        w = sine(440.0, 48000, 0.3, amp=0.5)
        a = extract_logmel(w, PAPER_CFG)
        b = extract_logmel(w, PAPER_CFG)
        assert np.array_equal(a.values, b.values)

    def test_for_rate_scaling(self):
        scaled = PAPER_CFG.for_rate(8000)
        assert scaled.sample_rate == 8000
        assert scaled.hop == 40
        assert scaled.win_length <= scaled.fft_size
        with pytest.raises(ValueError):
            PAPER_CFG.for_rate(44100)  # hop does not scale to an integer


class TestStats:
    def test_single_corpus_normalizes(self, rng):
        mel = MelSpectrogram(
            rng.standard_normal((50, 8)).astype(np.float32) * 3 + 1.5,
            0.005, 80.0, 7600.0, 48000,
        )
        stats = fit_stats([mel])
        out = apply_stats(mel, stats)
        assert np.allclose(out.values.mean(axis=0), 0.0, atol=1e-5)
        assert np.allclose(out.values.std(axis=0), 1.0, atol=1e-5)

    def test_refit_is_identity(self, rng):
        mels = [
            MelSpectrogram(
                rng.standard_normal((40, 4)).astype(np.float32) * 2 - 1,
                0.005, 80.0, 7600.0, 48000,
            )
            for _ in range(3)
        ]
        stats = fit_stats(mels)
        normalized = [apply_stats(m, stats) for m in mels]
        refit = fit_stats(normalized)
        assert np.allclose(refit.mean, 0.0, atol=1e-6)
        assert np.allclose(refit.std, 1.0, atol=1e-6)

    def test_two_spectrogram_hand_computed(self):
        a = MelSpectrogram(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32),
                           0.005, 80.0, 7600.0, 48000)
        b = MelSpectrogram(np.array([[5.0, 6.0]], dtype=np.float32),
                           0.005, 80.0, 7600.0, 48000)
        stats = fit_stats([a, b])
        # pooled frames: band0 = [1,3,5], band1 = [2,4,6]
        assert stats.mean == pytest.approx([3.0, 4.0])
        assert stats.std == pytest.approx([np.sqrt(8 / 3), np.sqrt(8 / 3)])

    def test_constant_band_flagged(self):
        mel = MelSpectrogram(np.ones((30, 3), dtype=np.float32), 0.005, 80.0, 7600.0, 48000)
        with pytest.warns(UserWarning):
            stats = fit_stats([mel])
        assert np.all(stats.std >= 1e-8)

    def test_empty_corpus_raises(self):
        with pytest.raises(ValueError):
            fit_stats([])


def _flat_mel(values, hop_s=0.005, rate=8000):
    return MelSpectrogram(np.asarray(values, dtype=np.float32), hop_s, 80.0, 3800.0, rate)


class TestUpsampleFeatures:
    # the frame-rate interpolation kernel spans ~0.3 s per side, so interior
    # claims need margins beyond that
    MARGIN_S = 0.35

    def test_constant_preserved(self):
        mel = _flat_mel(np.full((300, 4), 2.5))  # 1.5 s of frames
        series = upsample_features(mel, 2000, 3000)
        assert series.values.shape == (4, 3000)
        m = round(self.MARGIN_S * 2000)
        interior = series.values[:, m:-m]
        assert np.max(np.abs(interior - 2.5)) < 1e-3

    def test_frame_rate_identity(self):
        mel = _flat_mel(np.linspace(0, 1, 50 * 4).reshape(50, 4))
        series = upsample_features(mel, 200, 50)  # 200 Hz frame rate
        assert series.values.shape == (4, 50)
        assert np.allclose(series.values.T, mel.values, atol=1e-6)

    def test_linear_ramp_monotone_interior(self):
        ramp = np.linspace(0.0, 1.0, 300)[:, None].repeat(2, axis=1)
        series = upsample_features(_flat_mel(ramp), 2000, 3000)
        m = round(self.MARGIN_S * 2000)
        interior = series.values[0, m:-m]
        assert np.all(np.diff(interior) > -1e-6)

    def test_cross_rate_consistency(self, rng):
        from msrnv.resample import downsample_antialias
        from msrnv.audio import Waveform

        values = rng.standard_normal((600, 3)).astype(np.float32)  # 3 s
        # smooth the bands so both paths stay within interpolation accuracy
        kernel = np.hanning(9)
        kernel /= kernel.sum()
        smooth = np.apply_along_axis(lambda v: np.convolve(v, kernel, "same"), 0, values)
        mel = _flat_mel(smooth)
        hi = upsample_features(mel, 8000, 24000)
        lo = upsample_features(mel, 2000, 6000)
        m = round(self.MARGIN_S * 2000)
        for ch in range(3):
            down = downsample_antialias(
                Waveform(hi.values[ch].astype(np.float64), 8000), 2000
            )
            err = np.abs(down.samples[m:-m] - lo.values[ch][m:-m])
            assert np.max(err) < 1e-3

    def test_gross_length_mismatch_raises(self):
        mel = _flat_mel(np.zeros((100, 4)))
        with pytest.raises(FeatureLengthError):
            upsample_features(mel, 2000, 5000)  # ~2.5x the natural length

    def test_crop_and_pad_to_target(self):
        mel = _flat_mel(np.ones((100, 2)))
        natural = round(100 * 2000 / 200)
        for target in (natural - 5, natural, natural + 5):
            series = upsample_features(mel, 2000, target)
            assert series.values.shape[-1] == target


class TestFeatureFiles:
    def test_round_trip(self, tmp_path, rng):
        mel = _flat_mel(rng.standard_normal((37, 8)))
        path = tmp_path / "x.melf"
        write_features(mel, path)
        back = read_features(path)
        assert np.array_equal(back.values, mel.values)
        assert back.hop_seconds == mel.hop_seconds
        assert back.band_lo == mel.band_lo
        assert back.band_hi == mel.band_hi
        assert back.source_rate == mel.source_rate

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.melf").write_bytes(b"XXXX" + bytes(60))
        with pytest.raises(AudioFormatError):
            read_features(tmp_path / "bad.melf")

    def test_truncated(self, tmp_path, rng):
        mel = _flat_mel(rng.standard_normal((37, 8)))
        path = tmp_path / "x.melf"
        write_features(mel, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 10])
        with pytest.raises(AudioFormatError):
            read_features(path)

    def test_stats_round_trip(self, tmp_path, rng):
        stats = FeatureStats(rng.standard_normal(8), np.abs(rng.standard_normal(8)) + 0.5)
        write_stats(stats, tmp_path / "stats.json")
        back = read_stats(tmp_path / "stats.json")
        assert np.allclose(back.mean, stats.mean)
        assert np.allclose(back.std, stats.std)
