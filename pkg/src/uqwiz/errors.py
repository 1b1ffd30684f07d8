"""Exception types shared across the package."""


class UqwizError(Exception):
    """Base class for all errors raised by uqwiz."""


class ValidationError(UqwizError):
    """An input array violates a shape or normalization contract."""


class InsufficientSamplesError(ValidationError):
    """A sampling-based operation was given fewer samples than it needs."""


class UnknownQuantifierError(UqwizError):
    """An alias does not match any registered quantifier."""


class ModelConstructionError(UqwizError):
    """A layer stack cannot be assembled (dimension chain broken, bad rate, ...)."""


class TrainingDivergedError(UqwizError):
    """Training was aborted because the loss became non-finite."""


class ModelFileError(UqwizError):
    """Base class for model weight file problems."""


class TruncatedFileError(ModelFileError):
    """The file ended before the declared structure was complete."""


class ModelFormatError(ModelFileError):
    """Bad magic, unknown layer tag, or trailing garbage in a model file."""


class ChecksumError(ModelFileError):
    """Stored checksum does not match the file contents."""


class DatasetError(UqwizError):
    """A dataset source (CSV, generator spec) could not be parsed or validated."""


class PoolConfigError(UqwizError):
    """Process-pool configuration is inconsistent with the chosen context."""


class EnsembleStateError(UqwizError):
    """The ensemble directory is not in the state an operation requires."""


class EnsembleTaskError(UqwizError):
    """One or more per-model tasks failed; carries the failing model ids."""

    def __init__(self, message: str, failed_ids: dict[int, str]):
        super().__init__(message)
        self.failed_ids = failed_ids
