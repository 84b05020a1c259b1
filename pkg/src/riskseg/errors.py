"""Error categories surfaced by the command line interface.

Each class maps to a distinct process exit code (see ``cli.py``).
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(RuntimeError):
    """Missing or corrupt dataset manifests / samples."""


class CheckpointError(RuntimeError):
    """Unreadable checkpoint or config-hash mismatch."""


class TrainingDiverged(RuntimeError):
    """A loss component became non-finite; the step was aborted."""
