"""Exception types shared across the toolkit."""


class RetmSepError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(RetmSepError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedRateError(RetmSepError, ValueError):
    """Sample-rate conversion was requested with a non-integer ratio."""


class InfeasibleConfigError(RetmSepError, ValueError):
    """A scene or experiment configuration is physically impossible."""


class DegenerateInputError(RetmSepError, ValueError):
    """A signal has no usable content (e.g. zero power) for the operation."""


class DegenerateReferenceError(RetmSepError, ValueError):
    """Evaluation references are missing, zero, or linearly dependent."""


class NumericalFailureError(RetmSepError, RuntimeError):
    """A numerical routine (SVD, solve) failed to converge.

    The message carries the context (e.g. frequency-bin index) of the
    failing matrix.
    """


class ConfigError(RetmSepError, ValueError):
    """Experiment configuration failed validation.

    Messages are prefixed with the JSON field path of the offending entry,
    e.g. ``scene.sources[2].position``.
    """
