"""Exception hierarchy shared across the engine.

Every error raised by this package derives from :class:`CapaugError`, so
callers can catch one type at pipeline boundaries while tests assert on
the precise subclass.
"""


class CapaugError(Exception):
    """Base class for all errors raised by capaug."""


class ShapeError(CapaugError):
    """A matrix or vector has the wrong dimensions for an operation."""


class NumericError(CapaugError):
    """A value is non-finite or outside its mathematically valid range."""


class FormatError(CapaugError):
    """A binary file header is malformed (bad magic, version, or fields)."""


class CorruptionError(CapaugError):
    """A binary payload does not match its header (truncated or padded)."""


class ValidationError(CapaugError):
    """A record or argument violates a documented invariant."""


class EmptyPoolError(CapaugError):
    """Both modalities produced zero attributes; completeness is undefined."""


class GatewayError(CapaugError):
    """Base class for chat-backend failures."""


class TransportError(GatewayError):
    """Remote call failed after exhausting retries.

    ``attempts`` holds one human-readable line per failed attempt.
    """

    def __init__(self, message: str, attempts: list[str] | None = None):
        super().__init__(message)
        self.attempts = list(attempts or [])


class RequestError(GatewayError):
    """The backend rejected the request (HTTP 4xx); never retried."""


class ReplayMissError(GatewayError):
    """The replay script has no entry for a request digest."""

    def __init__(self, digest: str):
        super().__init__(f"replay script has no response for request {digest}")
        self.digest = digest


class ProtocolError(CapaugError):
    """An operation was invoked out of sequence (e.g. step after terminal)."""


class StageFailureError(CapaugError):
    """A rewrite stage produced no usable output after a retry.

    ``stages`` carries the partial stage map completed before the failure,
    for diagnostics.
    """

    def __init__(self, message: str, stages: dict | None = None):
        super().__init__(message)
        self.stages = dict(stages or {})


class ConfigError(CapaugError):
    """The pipeline configuration is inconsistent or degenerate."""
