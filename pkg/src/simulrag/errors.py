"""Exception types shared across the package.

Every error that callers are expected to catch lives here so that module
boundaries stay import-light. Errors carry enough context to be actionable
(offending field names, fixture keys, parameter values) rather than bare
messages.
"""

from __future__ import annotations


class SimulragError(Exception):
    """Base class for all package-specific errors."""


class SchemaViolation(SimulragError):
    """A record failed construction-time or parse-time validation."""


class UnknownTemplate(SimulragError):
    """A prompt template id is not in the registry."""


class MissingBinding(SimulragError):
    """A prompt render was attempted without covering every placeholder."""


class FixtureMissing(SimulragError):
    """The scripted backend has no response for a request key.

    Carries the full lookup key so fixture packs can be patched without
    reverse-engineering digests.
    """

    def __init__(self, key: str, template_id: str) -> None:
        super().__init__(
            f"no scripted fixture for key {key!r} (template {template_id!r}); "
            "the fixture pack does not cover this request"
        )
        self.key = key
        self.template_id = template_id


class MalformedStructuredOutput(SimulragError):
    """A completion could not be parsed into the expected shape."""


class TransportError(SimulragError):
    """The HTTP backend exhausted retries on transport or server failures."""


class RateLimited(SimulragError):
    """The HTTP backend exhausted retries on 429 responses."""

    def __init__(self, message: str, retry_after: float | None = None) -> None:
        super().__init__(message)
        self.retry_after = retry_after


class OutOfRangeParam(SimulragError):
    """A simulator parameter is outside its documented range."""


class ValidationFailed(SchemaViolation):
    """Extracted parameter settings failed handbook validation.

    ``fields`` lists the offending parameter names.
    """

    def __init__(self, message: str, fields: list[str] | None = None) -> None:
        super().__init__(message)
        self.fields = list(fields or [])


class ExtractionFailed(SimulragError):
    """Parameter extraction produced nothing usable after the repair pass."""


class TemplateFieldMissing(SimulragError):
    """A textual-context template referenced a value the fill step lacks."""


class UnknownPlaceholder(SimulragError):
    """A derived benchmark template uses a placeholder outside the handbook."""


class GroundingViolation(SimulragError):
    """A generated reference answer contains a number absent from its record."""

    def __init__(self, message: str, numerals: list[str] | None = None) -> None:
        super().__init__(message)
        self.numerals = list(numerals or [])


class PipelineAborted(SimulragError):
    """A pipeline stage failed; carries the stage name and the partial audit."""

    def __init__(self, stage: str, cause: Exception, audit: tuple = ()) -> None:
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.audit = tuple(audit)


class NonConvergence(SimulragError):
    """An iterative score (eigenvector, pagerank) failed to converge."""


class EmptyEnsemble(SimulragError):
    """An ensemble summary was requested for an output with no trajectories."""


class IoFailure(SimulragError):
    """A dataset or report file could not be read or written."""
