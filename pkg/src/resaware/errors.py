"""Exception hierarchy shared across the package."""


class ResawareError(Exception):
    """Base class for all package errors."""


class EmptySignal(ResawareError):
    """An operation received a zero-length waveform."""


class ConfigMismatch(ResawareError):
    """Incompatible sample rates or matrix shapes in the DSP front-end."""


class DegenerateFilterbank(ResawareError):
    """Mel filterbank has an all-zero row (too many filters for the FFT size)."""


class ShapeError(ResawareError):
    """Tensor shapes do not match the operation contract."""


class ConfigError(ResawareError):
    """Invalid model configuration or dataset/resolution index."""


class DataError(ResawareError):
    """Corpus- or split-level problem (too few speakers, empty split, ...)."""


class UnsupportedFormat(ResawareError):
    """WAV file is not PCM 16-bit RIFF."""


class CorruptFile(ResawareError):
    """WAV data chunk is truncated or the header is malformed."""


class DegenerateScores(ResawareError):
    """EER/AUC requested on a score set with a single class."""


class IncompatibleCheckpoint(ResawareError):
    """Checkpoint config hash does not match the current model config."""
