"""Exception types shared across the matching pipeline.

Every error the package raises on purpose derives from OntomatchError so
callers can catch one base class. The CLI maps subclasses onto process exit
codes; see cli.py.
"""

from __future__ import annotations


class OntomatchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OntomatchError):
    """A config file or override is missing, unreadable, or out of range."""


class InvalidParameter(OntomatchError):
    """A parameter value is outside its documented domain."""


class MalformedRecord(OntomatchError):
    """A line in an input file does not follow the documented format."""

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class DuplicateEntityId(OntomatchError):
    """The same entity id appears more than once in one ontology dump."""


class EmptyOntology(OntomatchError):
    """An ontology dump contains no entities."""


class UnknownEntity(OntomatchError):
    """An entity id was queried that the ontology does not contain."""


class DimensionMismatch(OntomatchError):
    """Vectors of different dimensionality were mixed."""


class ZeroVector(OntomatchError):
    """Cosine similarity was requested against an all-zero vector."""


class MissingVector(OntomatchError):
    """A precomputed-vector provider has no vector for a requested label."""


class ProviderUnavailable(OntomatchError):
    """An embedding provider failed after exhausting its retries."""


class EndpointUnavailable(OntomatchError):
    """An LLM endpoint failed after exhausting its retries."""


class MissingPlaceholder(OntomatchError):
    """A prompt template lacks one of the required placeholders."""


class StaleKB(OntomatchError):
    """Stored artifacts were produced under a different provider fingerprint."""


class PersistFailure(OntomatchError):
    """An artifact could not be written to disk."""


class MismatchedInputs(OntomatchError):
    """Two runs being compared were produced under different settings."""
