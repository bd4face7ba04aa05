"""Multi-sampling-rate neural vocoder: staged waveform generation over an
ascending rate ladder, with GAN training and benchmarking tools."""

from .audio import ClipSampler, Waveform, read_wav, trim_silence, write_wav
from .resample import (
    FilterKernel,
    RateLadder,
    band_energy_fraction,
    design_lowpass,
    downsample_antialias,
    upsample_sinc,
)
from .features import (
    ConditioningSeries,
    FeatureConfig,
    FeatureStats,
    MelSpectrogram,
    apply_stats,
    extract_logmel,
    fit_stats,
    read_features,
    stft_mag,
    upsample_features,
    write_features,
)
from .autograd import Tensor, grad_check
from .nn import RAdam, WaveNet, receptive_field
from .cascade import (
    GeneratorCascade,
    GeneratorSpec,
    StageGenerator,
    build_baseline,
    build_cascade,
    cascade_multiplies_per_second,
    count_parameters,
    stage_parameter_count,
)
from .adversarial import (
    DiscriminatorSpec,
    STFTResolutionSet,
    StageDiscriminator,
    build_discriminators,
    discriminator_loss,
    generator_loss,
    make_targets,
    mr_stft_loss,
    stft_loss_terms,
)
from .training import (
    Checkpoint,
    Dataset,
    DatasetEntry,
    TrainConfig,
    desk_config,
    load_cascade,
    load_checkpoint,
    load_dataset,
    make_synthetic_corpus,
    paper_config,
    train,
)
from .bench import MetricReport, RtfReport, bench_rtf, evaluate, log_spectral_distance
from .estimators import FeatureNormalizer, LogMelExtractor, MsrVocoder, SincResampler

__version__ = "0.1.0"

__all__ = [
    "ClipSampler",
    "Waveform",
    "read_wav",
    "trim_silence",
    "write_wav",
    "FilterKernel",
    "RateLadder",
    "band_energy_fraction",
    "design_lowpass",
    "downsample_antialias",
    "upsample_sinc",
    "ConditioningSeries",
    "FeatureConfig",
    "FeatureStats",
    "MelSpectrogram",
    "apply_stats",
    "extract_logmel",
    "fit_stats",
    "read_features",
    "stft_mag",
    "upsample_features",
    "write_features",
    "Tensor",
    "grad_check",
    "RAdam",
    "WaveNet",
    "receptive_field",
    "GeneratorCascade",
    "GeneratorSpec",
    "StageGenerator",
    "build_baseline",
    "build_cascade",
    "cascade_multiplies_per_second",
    "count_parameters",
    "stage_parameter_count",
    "DiscriminatorSpec",
    "STFTResolutionSet",
    "StageDiscriminator",
    "build_discriminators",
    "discriminator_loss",
    "generator_loss",
    "make_targets",
    "mr_stft_loss",
    "stft_loss_terms",
    "Checkpoint",
    "Dataset",
    "DatasetEntry",
    "TrainConfig",
    "desk_config",
    "load_cascade",
    "load_checkpoint",
    "load_dataset",
    "make_synthetic_corpus",
    "paper_config",
    "train",
    "MetricReport",
    "RtfReport",
    "bench_rtf",
    "evaluate",
    "log_spectral_distance",
    "FeatureNormalizer",
    "LogMelExtractor",
    "MsrVocoder",
    "SincResampler",
]
