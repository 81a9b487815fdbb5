"""Exception types shared across the package."""


class InvalidEdgeError(ValueError):
    """An edge references a station index outside [0, N) or is a self-loop."""


class GraphFileError(ValueError):
    """A graph file could not be parsed; the message names the offending line."""


class ConfigurationError(ValueError):
    """A configuration value is out of range or internally inconsistent."""


class MissingKeyError(ConfigurationError):
    """A required configuration key is absent; the message names the key."""


class SchemaVersionError(ValueError):
    """A stored artifact carries an unsupported schema version."""


class InsufficientDataError(ValueError):
    """Not enough data to perform the requested operation."""


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given inputs (e.g. all-zero truth)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; the message names the step."""
