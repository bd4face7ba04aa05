"""Estimator-style wrappers so the pipeline composes with the scikit-learn
ecosystem: stateless transformers for resampling and feature extraction, a
fit/transform normalizer, and the vocoder itself as a fit/predict estimator.

These wrap the functional modules; heavy lifting (training loop, checkpoint
format, CLI) lives there.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .audio import Waveform
from .cascade import GeneratorCascade
from .features import (
    FeatureConfig,
    FeatureStats,
    MelSpectrogram,
    apply_stats,
    extract_logmel,
    fit_stats,
)
from .resample import downsample_antialias, upsample_sinc
from .training import Dataset, DatasetEntry, TrainConfig, Trainer, TrainState
from .resample import RateLadder
from .validation import ensure_mel_list, ensure_waveform_list


class SincResampler(BaseEstimator, TransformerMixin):
    """Stateless transformer: windowed-sinc resampling to ``target_rate``."""

    def __init__(self, target_rate: int = 48000):
        self.target_rate = target_rate

    def fit(self, X, y=None):
        ensure_waveform_list(X)
        return self

    def transform(self, X):
        waves = ensure_waveform_list(X)
        out = []
        for w in waves:
            if self.target_rate >= w.rate:
                out.append(upsample_sinc(w, self.target_rate))
            else:
                out.append(downsample_antialias(w, self.target_rate))
        return out[0] if isinstance(X, Waveform) else out


class LogMelExtractor(BaseEstimator, TransformerMixin):
    """Waveforms to log-mel feature matrices (one per input)."""

    def __init__(
        self,
        sample_rate: int = 48000,
        fft_size: int = 2048,
        win_length: int = 2048,
        hop: int = 240,
        n_mels: int = 80,
        fmin: float = 80.0,
        fmax: float = 7600.0,
    ):
        self.sample_rate = sample_rate
        self.fft_size = fft_size
        self.win_length = win_length
        self.hop = hop
        self.n_mels = n_mels
        self.fmin = fmin
        self.fmax = fmax

    def _config(self) -> FeatureConfig:
        return FeatureConfig(
            sample_rate=self.sample_rate,
            fft_size=self.fft_size,
            win_length=self.win_length,
            hop=self.hop,
            n_mels=self.n_mels,
            fmin=self.fmin,
            fmax=self.fmax,
        )

    def fit(self, X, y=None):
        ensure_waveform_list(X)
        return self

    def transform(self, X):
        waves = ensure_waveform_list(X)
        cfg = self._config()
        out = [extract_logmel(w, cfg.for_rate(w.rate)) for w in waves]
        return out[0] if isinstance(X, Waveform) else out


class FeatureNormalizer(BaseEstimator, TransformerMixin):
    """Per-band zero-mean unit-variance scaling fitted on a feature corpus."""

    def fit(self, X, y=None):
        mels, _ = ensure_mel_list(X)
        self.stats_ = fit_stats(mels)
        self.n_bands_ = mels[0].n_bands
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        mels, single = ensure_mel_list(X)
        out = [apply_stats(m, self.stats_) for m in mels]
        return out[0] if single else out

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        mels, single = ensure_mel_list(X)
        out = []
        for m in mels:
            values = m.values.astype(np.float64) * self.stats_.std + self.stats_.mean
            out.append(
                MelSpectrogram(
                    values.astype(np.float32),
                    m.hop_seconds,
                    m.band_lo,
                    m.band_hi,
                    m.source_rate,
                )
            )
        return out[0] if single else out


class MsrVocoder(BaseEstimator):
    """Multi-rate vocoder estimator: ``fit`` trains the generator cascade on
    raw waveforms, ``predict`` synthesizes audio from log-mel features.

    ``predict`` expects raw (un-normalized) features as produced by
    :class:`LogMelExtractor` with matching settings; the normalization
    fitted during training is applied internally. Defaults are desk-scale.
    """

    def __init__(
        self,
        ladder: tuple[int, ...] = (1000, 2000, 4000, 8000),
        gen_layers: int = 5,
        gen_cycle: int = 5,
        gen_channels: int = 16,
        disc_layers: int = 5,
        disc_channels: int = 16,
        n_mels: int = 80,
        fmin: float = 80.0,
        fmax: float = 3800.0,
        mel_fft: int = 342,
        mel_win: int = 342,
        mel_hop: int = 40,
        lambda_adv: float = 1.0,
        batch_size: int = 4,
        clip_seconds: float = 0.25,
        total_steps: int = 3000,
        generator_only_steps: int = 2000,
        decay_step: int = 2250,
        lr: float = 1e-3,
        seed: int = 0,
        work_dir: str | None = None,
    ):
        self.ladder = ladder
        self.gen_layers = gen_layers
        self.gen_cycle = gen_cycle
        self.gen_channels = gen_channels
        self.disc_layers = disc_layers
        self.disc_channels = disc_channels
        self.n_mels = n_mels
        self.fmin = fmin
        self.fmax = fmax
        self.mel_fft = mel_fft
        self.mel_win = mel_win
        self.mel_hop = mel_hop
        self.lambda_adv = lambda_adv
        self.batch_size = batch_size
        self.clip_seconds = clip_seconds
        self.total_steps = total_steps
        self.generator_only_steps = generator_only_steps
        self.decay_step = decay_step
        self.lr = lr
        self.seed = seed
        self.work_dir = work_dir

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            ladder=tuple(self.ladder),
            gen_layers=self.gen_layers,
            gen_cycle=self.gen_cycle,
            gen_channels=self.gen_channels,
            disc_layers=self.disc_layers,
            disc_channels=self.disc_channels,
            sample_rate=self.ladder[-1],
            n_mels=self.n_mels,
            mel_fmin=self.fmin,
            mel_fmax=self.fmax,
            mel_fft=self.mel_fft,
            mel_win=self.mel_win,
            mel_hop=self.mel_hop,
            lambda_adv=self.lambda_adv,
            batch_size=self.batch_size,
            clip_seconds=self.clip_seconds,
            total_steps=self.total_steps,
            generator_only_steps=self.generator_only_steps,
            decay_step=self.decay_step,
            lr=self.lr,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        """Train on a corpus of waveforms (native rates may sit below the top
        ladder rate; such items train only the stages they can supply)."""
        waves = ensure_waveform_list(X)
        cfg = self._train_config()
        mel_cfg = cfg.mel_config()
        raw = [extract_logmel(w, mel_cfg.for_rate(w.rate)) for w in waves]
        stats = fit_stats(raw)
        entries = [
            DatasetEntry(
                f"item{i:04d}",
                w.samples.astype(np.float32),
                w.rate,
                apply_stats(mel, stats),
            )
            for i, (w, mel) in enumerate(zip(waves, raw))
        ]
        dataset = Dataset(entries, RateLadder(cfg.ladder))
        state = TrainState(cfg)
        if self.work_dir is not None:
            Trainer(state, dataset, self.work_dir).run()
        else:
            with tempfile.TemporaryDirectory(prefix="msrnv_fit_") as tmp:
                Trainer(state, dataset, tmp).run()
        self.config_ = cfg
        self.stats_: FeatureStats = stats
        self.cascade_: GeneratorCascade = state.cascade
        self._state = state
        return self

    def predict(self, X, rate: int | None = None, noise_seed: int = 0):
        """Synthesize one waveform per feature input at the top (or given)
        ladder rate."""
        check_is_fitted(self, "cascade_")
        template = MelSpectrogram(
            np.zeros((1, self.config_.n_mels), dtype=np.float32),
            self.config_.mel_config().hop_seconds,
            self.fmin,
            self.fmax,
            self.config_.sample_rate,
        )
        mels, single = ensure_mel_list(X, template)
        upto = rate if rate is not None else self.config_.ladder[-1]
        out = []
        for mel in mels:
            normalized = apply_stats(mel, self.stats_)
            result = self.cascade_.synthesize(
                normalized, upto=upto, noise_seed=noise_seed
            )
            out.append(result.waveforms[-1])
        return out[0] if single else out

    def save(self, path: str | Path) -> None:
        """Write the fitted state as a standard checkpoint plus a sibling
        ``<path>.stats.json`` with the feature normalization."""
        from .features import write_stats

        check_is_fitted(self, "cascade_")
        self._state.save(path)
        write_stats(self.stats_, Path(path).with_suffix(".stats.json"))

    @classmethod
    def load(cls, path: str | Path) -> "MsrVocoder":
        """Rebuild a fitted estimator from :meth:`save` output."""
        from .features import read_stats
        from .training import load_checkpoint

        ckpt = load_checkpoint(path)
        cfg = ckpt.config
        est = cls(
            ladder=cfg.ladder,
            gen_layers=cfg.gen_layers,
            gen_cycle=cfg.gen_cycle,
            gen_channels=cfg.gen_channels,
            disc_layers=cfg.disc_layers,
            disc_channels=cfg.disc_channels,
            n_mels=cfg.n_mels,
            fmin=cfg.mel_fmin,
            fmax=cfg.mel_fmax,
            mel_fft=cfg.mel_fft,
            mel_win=cfg.mel_win,
            mel_hop=cfg.mel_hop,
            lambda_adv=cfg.lambda_adv,
            batch_size=cfg.batch_size,
            clip_seconds=cfg.clip_seconds,
            total_steps=cfg.total_steps,
            generator_only_steps=cfg.generator_only_steps,
            decay_step=cfg.decay_step,
            lr=cfg.lr,
            seed=cfg.seed,
        )
        state = TrainState.from_checkpoint(ckpt)
        est.config_ = cfg
        est.stats_ = read_stats(Path(path).with_suffix(".stats.json"))
        est.cascade_ = state.cascade
        est._state = state
        return est
