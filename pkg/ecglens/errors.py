"""
Exception hierarchy for the ECGLens engine
Each error also derives from the builtin callers would naturally catch
"""


class EcgLensError(Exception):
    """Base class for every error raised by the engine."""


class DataValidationError(EcgLensError, ValueError):
    """Manifest, record or feature input violates its format or invariants."""


class ShapeError(EcgLensError, ValueError):
    """Tensor or network input shapes do not agree."""


class CheckpointError(EcgLensError, ValueError):
    """Checkpoint file is truncated, corrupted or from another format version."""


class ConfigMismatchError(EcgLensError, ValueError):
    """A stored configuration does not match the one requested."""


class ContributionError(EcgLensError, ValueError):
    """Lead contribution rates cannot be computed."""


class OutOfScopeError(EcgLensError, ValueError):
    """Requested a feature the engine deliberately does not implement."""
