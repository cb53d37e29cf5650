"""Shared exception types."""


class AtomgnnError(Exception):
    """Base class for package errors."""


class ValidationError(AtomgnnError):
    """An input violated a documented contract."""


class SchemaError(AtomgnnError):
    """A file did not conform to its documented schema."""


class ConfigError(AtomgnnError):
    """A run configuration was missing or inconsistent."""
