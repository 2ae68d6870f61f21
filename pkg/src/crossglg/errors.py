"""Exception types shared across the package."""
from __future__ import annotations


class CrossglgError(Exception):
    """Base class; the CLI maps these to exit code 1 with a one-line message."""


class TopologyError(CrossglgError):
    """Unknown topology name or invalid topology definition."""


class DataFormatError(CrossglgError):
    """Malformed dataset / description / embedding / checkpoint file."""


class DescriptionError(CrossglgError):
    """Action description fails joint-coverage validation."""


class ExtractionError(CrossglgError):
    """Key-joint extraction produced no joints for a description."""


class ConfigError(CrossglgError):
    """Invalid model or run configuration."""


class CheckpointError(CrossglgError):
    """Checkpoint missing, corrupt, or in the wrong state (e.g. not frozen)."""
