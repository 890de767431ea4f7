"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class DataError(RuntimeError):
    """A persisted artifact is unreadable: bad version, shape, or checksum."""


class TrainingError(RuntimeError):
    """Training produced a nonfinite loss or gradient."""


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given inputs (degenerate denominator)."""
