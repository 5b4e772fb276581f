"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration. The message names the offending field."""
