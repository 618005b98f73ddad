"""Exporter error types; the CLI maps them onto exit codes 1 and 2."""


class ExportError(Exception):
    """Base class."""


class DomainError(ExportError):
    """Input outside an operation's domain (undersized image, bad label)."""


class ConfigError(ExportError):
    """Invalid configuration or unavailable encoder backend."""
