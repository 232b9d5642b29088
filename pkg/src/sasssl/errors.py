"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A configuration value violates its documented constraints."""


class InputError(ValueError):
    """An input array or object has the wrong shape or content."""


class BalanceError(ValueError):
    """A labeled pool cannot be split into class-balanced subsets."""


class InsufficientLabelsError(ValueError):
    """Label subsampling would leave a class with no examples."""


class FormatError(ValueError):
    """An on-disk container is malformed or of an unexpected version."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given labels (e.g. one class only)."""


class NumericalError(FloatingPointError):
    """A computation produced a non-finite or singular result."""
