"""Exception types shared across the pipeline."""

from __future__ import annotations


class DraftsmithError(Exception):
    """Base class for all package errors."""


class InvalidConfig(DraftsmithError):
    """Run configuration violates one or more invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ProviderUnavailable(DraftsmithError):
    """A remote provider failed after the retry budget was exhausted."""

    def __init__(self, message: str, attempts: int = 1):
        self.attempts = attempts
        super().__init__(message)


class RateLimited(DraftsmithError):
    """Provider returned a rate-limit response."""

    def __init__(self, retry_after_s: float):
        self.retry_after_s = retry_after_s
        super().__init__(f"rate limited, retry after {retry_after_s}s")


class MalformedResponse(DraftsmithError):
    """Provider response could not be parsed."""


class ContextOverflow(DraftsmithError):
    """Prompt exceeded the backend's context limit."""


class UnknownModel(DraftsmithError):
    """Model identifier missing from the pricing table."""

    def __init__(self, model: str):
        self.model = model
        super().__init__(f"unknown model: {model}")


class SeedOverflow(DraftsmithError):
    """More seed references than the bibliography cap allows."""


class KTooLarge(DraftsmithError):
    """Requested more clusters than there are records."""


class BudgetTooSmall(DraftsmithError):
    """Context budget below the minimum workable size."""


class MalformedModelOutput(DraftsmithError):
    """Model output failed structured parsing after the re-prompt attempt."""


class StageExhausted(DraftsmithError):
    """A stage was rejected more times than max_regenerations allows."""

    def __init__(self, stage: str):
        self.stage = stage
        super().__init__(f"stage exhausted: {stage}")


class DanglingCitation(DraftsmithError):
    """Document cites keys absent from its bibliography."""

    def __init__(self, keys: list[str]):
        self.keys = sorted(keys)
        super().__init__(f"dangling citation keys: {', '.join(self.keys)}")


class MissingSection(DraftsmithError):
    """Manuscript lacks a required section."""


class RowSumMismatch(DraftsmithError):
    """A ratings-matrix row does not sum to the rater count."""


class SchemaError(DraftsmithError):
    """CSV cell violates the declared schema."""

    def __init__(self, message: str, row: int, column: str):
        self.row = row
        self.column = column
        super().__init__(f"{message} (row {row}, column {column})")


class CheckpointConflict(DraftsmithError):
    """Decision posted against a checkpoint that is no longer pending."""


class UnknownRun(DraftsmithError):
    """Run id not present in the state store."""


class UnknownCheckpoint(DraftsmithError):
    """Checkpoint id not present in the state store."""
