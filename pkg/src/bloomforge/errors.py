"""Exception taxonomy shared across the pipeline.

The CLI maps these onto exit codes: configuration and input validation
problems exit 1, upstream/external failures (missing or stale stage
artifacts, backend errors) exit 2, and internal invariant violations exit 3.
"""


class BloomforgeError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigError(BloomforgeError):
    """Bad configuration file, unknown keys, or invalid parameter values."""


class CorpusError(BloomforgeError):
    """Document ingestion, segmentation, glossary, or knowledge-tree failure."""


class RetrievalError(BloomforgeError):
    """Index construction or query-time failure (empty index, unknown id, degenerate vector)."""


class GatewayError(BloomforgeError):
    """Base class for chat/embedding backend failures."""


class RetriableError(GatewayError):
    """Transient backend failure (5xx, rate limit, transport); the gateway retries these."""


class NonRetriableError(GatewayError):
    """Permanent backend rejection (4xx); surfaced immediately without retry."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class RetryExhaustedError(GatewayError):
    """All retry attempts failed; carries the attempt count."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(GatewayError):
    """Backend answered but the payload does not match the wire contract."""

    def __init__(self, message: str, payload: object = None):
        super().__init__(message)
        self.payload = payload


class ParseError(BloomforgeError):
    """Model output did not follow the requested layout; carries the raw text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class GenerationError(ParseError):
    """Question synthesis produced unusable output; the draft is discarded with a reason."""


class ScoringError(BloomforgeError):
    """Judge output stayed unparseable after the retry; the sample is quarantined."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class QualityError(BloomforgeError):
    """Filtering or dedup precondition failure (missing report, empty split)."""


class ExtractionError(BloomforgeError):
    """Unbalanced or stray think delimiters in a candidate output."""


class JudgingError(BloomforgeError):
    """Arena comparison failed even after the retry."""


class StaleManifestError(BloomforgeError):
    """Upstream stage artifacts were produced under a different configuration."""
