"""Exception hierarchy shared across the toolkit."""


class InkmarkError(Exception):
    """Base class for all domain errors raised by this package."""


class ParameterError(InkmarkError, ValueError):
    """A parameter is outside its documented range."""


class ValidationError(InkmarkError, ValueError):
    """An input value violates a structural invariant."""


class KeyFormatError(InkmarkError, ValueError):
    """A key file or key payload is malformed."""


class RateLimitExceeded(InkmarkError):
    """A client exhausted its query budget for the current window."""

    def __init__(self, retry_after: float):
        super().__init__(f"query budget exhausted, retry after {retry_after:.3f}s")
        self.retry_after = retry_after


class DuplicateProviderError(InkmarkError):
    """A provider id is already registered."""
