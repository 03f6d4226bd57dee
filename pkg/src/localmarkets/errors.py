"""Shared exception hierarchy.

Every domain failure raised by this package derives from DomainError so the
command line layer can map it to a single exit code.
"""


class DomainError(Exception):
    """Base class for all domain-level failures."""


class SchemaError(DomainError):
    """An input file does not match its documented schema."""


class NonFiniteValue(DomainError):
    """An input series contains NaN or infinity."""


class BadLength(DomainError):
    """An input series has an invalid length."""
