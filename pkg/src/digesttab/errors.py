"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class DigesttabError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DigesttabError):
    """An input violates a documented precondition or invariant."""


class EmptyCorpusError(ValidationError):
    pass


class AllEmptyColumnError(ValidationError):
    pass


class SchemaMismatchError(ValidationError):
    pass


class MissingAlignmentError(ValidationError):
    pass


class TooFewSamplesError(ValidationError):
    pass


class MalformedXmlError(DigesttabError):
    """The raw document could not be tokenized as XML at all.

    Distinct from a failed content filter: a table that raises this never
    reaches the filter cascade.
    """


class TableParseError(DigesttabError):
    """Heuristics could not produce a rectangular row-per-paper table.

    ``filter_id`` distinguishes failures that correspond to a corpus
    filter (for funnel attribution) from plain heuristic defects.
    """

    def __init__(self, message: str, filter_id: str = "parse-failure"):
        super().__init__(message)
        self.filter_id = filter_id


class ProviderError(DigesttabError):
    """A provider call failed after the transport retry budget.

    ``classification`` is one of: "provider", "timeout", "auth",
    "rate-limit", "context-overflow", "server", "offline-cache-miss",
    "not-configured".
    """

    def __init__(self, message: str, classification: str = "provider"):
        super().__init__(message)
        self.classification = classification


class ResolverUnavailableError(DigesttabError):
    """Metadata lookups failed for transport reasons, not missing entries."""


class GenerationFailedError(DigesttabError):
    """The semantic retry budget was exhausted without a usable output."""


class MalformedResponseError(DigesttabError):
    """Provider output could not be parsed even after retries."""


class UsageError(DigesttabError):
    """Bad command-line invocation."""
