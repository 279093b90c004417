"""Exception types shared across the package."""


class SSLGMError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SSLGMError, ValueError):
    """Inconsistent dimensions, out-of-range parameters or bad config keys."""


class DataError(SSLGMError, ValueError):
    """Malformed or non-finite observational data.

    ``line`` and ``field`` are filled in when the error comes from a file.
    """

    def __init__(self, message, line=None, field=None):
        if line is not None:
            prefix = f"line {line}"
            if field is not None:
                prefix += f", field '{field}'"
            message = f"{prefix}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class LearningError(SSLGMError, RuntimeError):
    """Raised when a fit cannot produce a trustworthy model."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MetricUndefinedError(SSLGMError, ValueError):
    """A metric is not defined for the given labels or target."""
