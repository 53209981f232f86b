"""Exception types shared across the package."""


class AuditError(Exception):
    """Base class for all errors raised by recllm_audit."""


class ConfigError(AuditError, ValueError):
    """Invalid configuration or an inconsistent combination of options."""


class ParseError(AuditError, ValueError):
    """A malformed input row. Carries the 1-based line number when known."""

    def __init__(self, message, line_no=None, path=None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line_no is not None:
            where += f":{line_no}"
        super().__init__(f"{where}: {message}" if where else message)


class SamplingError(AuditError, ValueError):
    """Not enough eligible users or history to satisfy a request."""


class TransportError(AuditError):
    """The completion endpoint could not be reached after all retries."""


class ProviderError(AuditError):
    """The completion endpoint answered with a non-success HTTP status."""

    def __init__(self, message, status=None):
        self.status = status
        super().__init__(message)


class CacheMissError(AuditError, KeyError):
    """A strict replay store has no record for the requested call."""


class TrainingError(AuditError, RuntimeError):
    """Model fitting diverged."""
