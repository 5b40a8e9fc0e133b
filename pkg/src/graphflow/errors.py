"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration values."""


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""
