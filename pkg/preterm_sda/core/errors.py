"""Exception hierarchy shared by the library and the command layer."""


class SdaError(Exception):
    """Base class for all preterm-sda errors."""

    def __init__(self, message: str):
        super().__init__(message)
        self.message: str = message


class RecordFormatError(SdaError):
    """A record, batch or checkpoint file does not follow the on-disk format."""


class RecordValidationError(SdaError):
    """An EegRecord violates one of its invariants."""


class AnnotationError(SdaError):
    """An annotation file or event list is invalid."""


class ManifestError(SdaError):
    """A dataset manifest cannot be parsed."""


class FilterDesignError(SdaError):
    """Invalid FIR design parameters."""


class SignalTooShortError(SdaError):
    """The signal is too short for the requested operation."""


class ShapeError(SdaError):
    """Tensor shapes do not match the operation."""


class RunningStatsError(SdaError):
    """Batch normalization was asked for inference before running statistics exist."""


class ArchitectureMismatchError(SdaError):
    """Parameters were produced for a different network architecture."""


class CheckpointError(SdaError):
    """A checkpoint or ensemble file is unreadable or inconsistent."""


class TrainingError(SdaError):
    """Training cannot proceed with the given data or configuration."""


class NonFiniteGradientError(TrainingError):
    """A gradient contained NaN or infinity."""


class FusionError(SdaError):
    """Traces cannot be fused with the requested fusion settings."""


class MetricError(SdaError):
    """A metric cannot be computed on the given inputs."""


class UndefinedMetricError(MetricError):
    """A metric is undefined, e.g. AUC over a single class."""


class ConfigError(SdaError):
    """An experiment configuration is invalid."""


class CommandError(SdaError):
    """A command was invoked with invalid arguments."""
