"""Exception types shared across the package."""


class AudioFormatError(ValueError):
    """Malformed or unreadable audio container."""


class UnsupportedAudioError(ValueError):
    """Valid container but an unsupported encoding (bit depth, channels)."""


class FilterDesignError(ValueError):
    """Requested low-pass specification cannot be realized."""


class FeatureLengthError(ValueError):
    """Conditioning features disagree with the waveform length beyond tolerance."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, corrupt, or of an incompatible version."""


class TrainingDiverged(RuntimeError):
    """A loss term became non-finite; training state was checkpointed before abort."""
