"""Exception hierarchy shared across the package.

Every domain failure raises a subclass of :class:`PerifaceError`; the CLI
maps that base class to exit code 1 and usage problems to exit code 2.
"""


class PerifaceError(Exception):
    """Base class for all domain errors raised by this package."""


class DimensionError(PerifaceError):
    """Shapes or vector lengths do not match an operation's contract."""


class InvalidLandmarksError(PerifaceError):
    """A landmark set is malformed or falls outside image bounds."""


class DegenerateMaskError(PerifaceError):
    """The visible window of a periocular mask has zero area."""


class EmptyBatchError(PerifaceError):
    """An adversarial loss was asked to reduce over an empty batch."""


class InvalidLossError(PerifaceError):
    """A loss component is NaN or infinite; training must halt."""


class DivergenceError(PerifaceError):
    """Latent optimization produced a non-finite loss.

    Carries the loss trace accumulated up to the failing iteration.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ScaleError(PerifaceError):
    """An image is too small for the requested multi-scale pyramid."""


class ConditioningError(PerifaceError):
    """A covariance estimate is rank-deficient and no shrinkage was applied."""


class DegenerateEmbeddingError(PerifaceError):
    """Cosine similarity was requested for a zero-norm embedding."""


class InsufficientPairsError(PerifaceError):
    """A verification pair list lacks a genuine or impostor class.

    Carries the partial curves that were still computable (the present
    class's curve; EER and accuracy are unavailable).
    """

    def __init__(self, message, curves=None):
        super().__init__(message)
        self.curves = curves


class LandmarkBackendError(PerifaceError):
    """The landmark encoder backend failed to produce keypoints."""


class ConfigError(PerifaceError):
    """A run configuration is inconsistent with the requested operation."""


class EmptyDatasetError(PerifaceError):
    """Dataset ingestion produced no usable records."""


class IOFailureError(PerifaceError):
    """A file could not be read or written during archive operations."""
