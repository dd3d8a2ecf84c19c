"""Exception hierarchy shared by every kgrag module."""

from __future__ import annotations

from typing import Any


class KgRagError(Exception):
    """Base class for all kgrag errors."""


# --- UTG documents -------------------------------------------------------


class ParseError(KgRagError, ValueError):
    """A UTG, suite or fixture document is not well-formed."""


class ValidationError(KgRagError, ValueError):
    """A document parsed but violates a model invariant."""

    def __init__(self, violation: Any):
        self.violation = violation
        super().__init__(str(violation))


class GenerationError(KgRagError):
    """A synthetic benchmark cannot satisfy its BenchSpec."""


# --- providers -----------------------------------------------------------


class ProviderError(KgRagError):
    """Base for backend failures."""


class TransportError(ProviderError):
    """Network-level failure; the request may be retried."""


class BackendError(ProviderError):
    """The backend rejected the request; retrying will not help."""


class UnsupportedError(ProviderError):
    """The backend cannot provide the requested capability."""


# --- intents / scoring ---------------------------------------------------


class DecompositionError(KgRagError, ValueError):
    """A milestone list could not be parsed from a provider response."""


class RangeError(KgRagError, ValueError):
    """Invalid slice bounds for softmax_slice."""


class DomainError(KgRagError, ValueError):
    """A parameter is outside its mathematical domain."""


class LengthMismatch(KgRagError, ValueError):
    """Logit vector length disagrees with the milestone count."""


# --- pathfinder ----------------------------------------------------------


class SearchInterrupted(KgRagError):
    """A provider failure stopped a search; carries the state needed to resume."""

    def __init__(self, cause: BaseException, depth: int, frontier: list, valid: list):
        self.cause = cause
        self.depth = depth
        self.frontier = frontier
        self.valid = valid
        super().__init__(f"search interrupted at depth {depth}: {cause}")


# --- knowledge store -----------------------------------------------------


class DimensionMismatch(KgRagError, ValueError):
    """Embedding dimensions disagree within one database."""


class ModelMismatch(KgRagError, ValueError):
    """Query embedder differs from the model the database was built with."""


class VersionError(KgRagError):
    """Unknown knowledge-database format version."""


class CorruptionError(KgRagError):
    """Knowledge-database file is truncated or fails its checksum."""


# --- simulator -----------------------------------------------------------


class PolicyError(KgRagError):
    """A policy produced an illegal decision."""


class SuiteMismatch(KgRagError, ValueError):
    """Two reports were produced over different task suites."""
