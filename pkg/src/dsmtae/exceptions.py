"""Exception hierarchy shared by every dsmtae module."""


class DSMTError(Exception):
    """Base class for all package errors."""


class ParameterError(DSMTError, ValueError):
    """An argument is outside its documented domain."""


class ShapeError(DSMTError, ValueError):
    """Array shapes do not match what an operation requires."""


class FormatError(DSMTError):
    """A file could not be parsed as a supported volume format."""


class MetadataError(DSMTError):
    """Age/sex labels for a volume are missing or invalid."""


class ConfigurationError(DSMTError, ValueError):
    """An experiment or model configuration is inconsistent."""


class TrainingError(DSMTError, RuntimeError):
    """Optimization produced a non-finite loss.

    ``record`` holds the loss breakdown of the offending step.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class DegenerateTargetError(DSMTError, ValueError):
    """A metric is undefined because the targets have zero variance."""


class CompatibilityError(DSMTError, ValueError):
    """A checkpoint does not match the requested model configuration."""
