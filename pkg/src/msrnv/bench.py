"""Inference benchmarking and objective spectral metrics.

The real-time factor is wall-clock seconds of compute per second of output
audio, measured single-stream with a monotonic clock after discarding
warmup runs. Quality proxies are the log-spectral distance and the
multi-resolution spectral distance against anti-aliased references.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversarial import make_targets, mr_stft_loss
from .audio import Waveform
from .features import read_features, stft_mag
from .resample import RateLadder, band_energy_fraction
from .training import (
    TrainConfig,
    load_cascade,
    load_manifest,
    read_wav,
)


@dataclass
class RtfReport:
    model_id: str
    thread_count: int
    utterances: list[str]
    durations: list[float]
    wall_times: list[float]
    stage_seconds: list[list[float]]

    @property
    def rtfs(self) -> list[float]:
        return [w / d for w, d in zip(self.wall_times, self.durations)]

    @property
    def mean_rtf(self) -> float:
        return float(np.mean(self.rtfs))

    @property
    def high_variance(self) -> bool:
        """Flag runs whose spread exceeds 20% of the mean."""
        if len(self.rtfs) < 2:
            return False
        return float(np.std(self.rtfs)) > 0.2 * self.mean_rtf

    @property
    def mean_stage_seconds(self) -> list[float]:
        return [float(v) for v in np.mean(np.asarray(self.stage_seconds), axis=0)]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["utterance", "duration_s", "wall_s", "rtf"])
            for uid, dur, wall, rtf in zip(
                self.utterances, self.durations, self.wall_times, self.rtfs
            ):
                writer.writerow([uid, f"{dur:.6g}", f"{wall:.6g}", f"{rtf:.6g}"])
            writer.writerow(["mean", "", "", f"{self.mean_rtf:.6g}"])


def _thread_count() -> int:
    import os

    return int(os.environ.get("OPENBLAS_NUM_THREADS", os.cpu_count() or 1))


def bench_rtf(
    checkpoint_path: str | Path,
    features_dir: str | Path,
    n_utts: int,
    warmup: int = 1,
    noise_seed: int = 0,
) -> RtfReport:
    """Synthesize ``n_utts`` feature files end-to-end, timing each stage."""
    cascade, cfg = load_cascade(checkpoint_path)
    paths = sorted(Path(features_dir).glob("*.melf"))[:n_utts]
    if not paths:
        raise ValueError(f"no .melf feature files found in {features_dir}")
    mels = [read_features(p) for p in paths]
    for k in range(min(warmup, len(mels))):
        cascade.synthesize(mels[k], noise_seed=noise_seed)
    report = RtfReport(
        model_id=Path(checkpoint_path).name,
        thread_count=_thread_count(),
        utterances=[],
        durations=[],
        wall_times=[],
        stage_seconds=[],
    )
    for path, mel in zip(paths, mels):
        t0 = time.perf_counter()
        result = cascade.synthesize(mel, noise_seed=noise_seed)
        wall = time.perf_counter() - t0
        top = result.waveforms[-1]
        report.utterances.append(path.stem)
        report.durations.append(top.duration_seconds)
        report.wall_times.append(wall)
        report.stage_seconds.append(result.stage_seconds)
    return report


def log_spectral_distance(
    x: Waveform, y: Waveform, fft_size: int = 1024
) -> float:
    """Mean over frames of the RMS log-power difference, in dB."""
    if x.rate != y.rate:
        raise ValueError(f"rate mismatch {x.rate} vs {y.rate}")
    n = min(len(x), len(y))
    hop = fft_size // 4
    sx = stft_mag(x.samples[:n], fft_size, fft_size, hop)
    sy = stft_mag(y.samples[:n], fft_size, fft_size, hop)
    px = np.maximum(sx**2, 1e-10)
    py = np.maximum(sy**2, 1e-10)
    diff = 10.0 * np.log10(px / py)
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=1))))


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)  # utterance, rate, lsd_db, mrstft

    def aggregate(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, list[float]]] = {}
        for row in self.rows:
            bucket = out.setdefault(row["rate"], {"lsd_db": [], "mrstft": []})
            bucket["lsd_db"].append(row["lsd_db"])
            bucket["mrstft"].append(row["mrstft"])
        return {
            rate: {k: float(np.mean(v)) for k, v in vals.items()}
            for rate, vals in out.items()
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["utterance", "rate", "lsd_db", "mrstft"])
            for row in self.rows:
                writer.writerow(
                    [
                        row["utterance"],
                        row["rate"],
                        f"{row['lsd_db']:.6g}",
                        f"{row['mrstft']:.6g}",
                    ]
                )


def evaluate(
    checkpoint_path: str | Path,
    manifest_path: str | Path,
    out_csv: str | Path | None = None,
    noise_seed: int = 0,
) -> MetricReport:
    """Per-rate objective distances between synthesized audio and anti-aliased
    references for every manifest utterance."""
    cascade, cfg = load_cascade(checkpoint_path)
    ladder = RateLadder(cfg.ladder)
    resolution_set = cfg.resolution_set()
    report = MetricReport()
    for audio_path, native_rate, feats_path in load_manifest(manifest_path):
        reference = read_wav(audio_path)
        mel = read_features(feats_path)
        usable = ladder.max_stage_for(native_rate)
        usable_ladder = RateLadder(cfg.ladder[:usable])
        targets = make_targets(reference, usable_ladder)
        result = cascade.synthesize(
            mel, upto=cfg.ladder[usable - 1], noise_seed=noise_seed
        )
        for wave, target in zip(result.waveforms, targets):
            n = min(len(wave), len(target))
            if n != len(wave) or n != len(target):
                warnings.warn(
                    f"{audio_path}: cropping to {n} samples at {wave.rate} Hz "
                    f"for metric alignment",
                    stacklevel=2,
                )
            gen = Waveform(wave.samples[:n], wave.rate)
            ref = Waveform(target.samples[:n], target.rate)
            report.rows.append(
                {
                    "utterance": Path(audio_path).stem,
                    "rate": wave.rate,
                    "lsd_db": log_spectral_distance(gen, ref),
                    "mrstft": float(
                        mr_stft_loss(
                            gen.samples.astype(np.float64),
                            ref.samples.astype(np.float64),
                            resolution_set.for_rate(wave.rate),
                        ).item()
                    ),
                }
            )
    if out_csv is not None:
        report.write_csv(out_csv)
    return report


def octave_band_fractions(w: Waveform, ladder: RateLadder) -> list[float]:
    """Energy fraction per ladder octave band [f_{i-1}/2, f_i/2) up to the
    waveform's own Nyquist (half-open bands, so the fractions sum to one)."""
    edges = [0.0] + [rate / 2.0 for rate in ladder if rate <= w.rate]
    x = np.asarray(w.samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size))) ** 2
    total = spec.sum()
    if total <= 0.0:
        raise ValueError("zero-energy signal")
    freqs = np.fft.rfftfreq(x.size, d=1.0 / w.rate)
    out = []
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        last = i == len(edges) - 2
        band = (freqs >= lo) & ((freqs <= hi) if last else (freqs < hi))
        out.append(float(spec[band].sum() / total))
    return out
