"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid cluster or run configuration."""


class AllocationError(RuntimeError):
    """Symmetric heap capacity exhausted."""


class ProtocolError(RuntimeError):
    """A coordination contract was violated (mismatched collectives, double release, ...)."""


class BuildError(ValueError):
    """Task-graph construction failed (unknown op type, region out of bounds, ...)."""


class VerificationError(RuntimeError):
    """A run did not match its reference result."""
