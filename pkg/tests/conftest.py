import numpy as np
import pytest

from msrnv.audio import Waveform
from msrnv.training import TrainConfig


def sine(freq: float, rate: int, seconds: float, amp: float = 0.5, phase: float = 0.0):
    t = np.arange(round(seconds * rate)) / rate
    return Waveform((amp * np.sin(2 * np.pi * freq * t + phase)).astype(np.float64), rate)


def micro_config(**overrides) -> TrainConfig:
    """Two-stage ladder with tiny nets; one training step runs in ~100 ms."""
    base = dict(
        ladder=(1000, 2000),
        gen_layers=2,
        gen_cycle=2,
        gen_channels=4,
        disc_layers=2,
        disc_channels=4,
        sample_rate=2000,
        n_mels=8,
        mel_fmin=50.0,
        mel_fmax=950.0,
        mel_fft=86,
        mel_win=86,
        mel_hop=10,
        lambda_adv=1.0,
        batch_size=2,
        clip_seconds=0.125,
        total_steps=4,
        generator_only_steps=2,
        decay_step=3,
        telemetry_every=1,
        seed=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """Tiny synthetic corpus matching micro_config (2-rate ladder)."""
    from msrnv.training import make_synthetic_corpus

    out = tmp_path_factory.mktemp("micro_corpus")
    cfg = micro_config()
    manifest = make_synthetic_corpus(
        out, n_utts=3, duration_s=0.6, f0_range_hz=(120.0, 240.0), seed=11, cfg=cfg
    )
    return cfg, manifest
