"""Exception hierarchy shared across the package.

Parse failures during generation are not exceptions: derailed outputs are
values (see ``baregen.prompting.Derail``) so they can be counted and replaced.
"""

from __future__ import annotations


class BaregenError(Exception):
    """Base class for all package errors."""


class InvalidSpec(BaregenError):
    """A domain spec, endpoint, or record violates a structural invariant."""


class ConfigError(BaregenError):
    """Run configuration is incomplete or inconsistent."""


class TemplateError(BaregenError):
    """A prompt template cannot be rendered (missing slot, empty inputs)."""


class ArityMismatch(BaregenError):
    """Panel size does not match the number of supplied items."""


class TransportError(BaregenError):
    """HTTP transport failed after exhausting retries."""


class RateLimited(TransportError):
    """Endpoint returned 429 on every attempt."""


class MalformedResponse(TransportError):
    """Endpoint returned a body that does not follow the expected schema."""


class UnknownProfile(BaregenError):
    """Requested mock behavior profile does not exist."""


class EmptyInput(BaregenError):
    """Embedding input was empty or contained an empty text."""


class DimensionMismatch(BaregenError):
    """Vectors of inconsistent length within one operation."""


class ZeroVector(BaregenError):
    """Cosine similarity is undefined for an all-zero vector."""


class TooFewItems(BaregenError):
    """Fewer than two items (or zero eligible pairs) for a pairwise metric."""


class MissingLabels(BaregenError):
    """Class-restricted similarity requested without labels."""


class NoClassSet(BaregenError):
    """Coverage requested for a domain without a class set."""


class PoolTooSmall(BaregenError):
    """Example pool too small for the requested sample size."""


class InsufficientSynthetic(BaregenError):
    """More judge trials requested than synthetic records available."""


class BudgetExhausted(BaregenError):
    """Derail replacement exceeded the per-stage transport call budget."""


class SchemaError(BaregenError):
    """A JSONL input file violates the expected schema."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class UnparsedRecord(BaregenError):
    """A record lacks the parsed fields required for export."""

    def __init__(self, record_id: str, message: str = "record not parsed for export"):
        super().__init__(f"{record_id}: {message}")
        self.record_id = record_id


class MissingReport(BaregenError):
    """A run directory lacks a report required for comparison."""
