"""
Exception types for the hybrid-grained quantized retrieval engine.
"""

from typing import Optional


class HybridQuantError(Exception):
    """Base class for all engine errors."""


class ConfigError(HybridQuantError, ValueError):
    """Invalid engine, trainer or runtime configuration."""


class DimensionError(HybridQuantError, ValueError):
    """Input vectors do not match the configured dimensions."""


class DegenerateItemError(HybridQuantError, ValueError):
    """An item whose aggregated condensed tokens have zero mean."""

    def __init__(self, item_id: Optional[int], message: str = "zero-mean AGG tokens"):
        self.item_id = item_id
        super().__init__(f"degenerate item {item_id}: {message}")


class NonFiniteLossError(HybridQuantError, RuntimeError):
    """A training step produced a non-finite loss at some level."""

    def __init__(self, level: str, value: float):
        self.level = level
        self.value = value
        super().__init__(f"non-finite loss {value} at level {level}")


class FormatError(HybridQuantError, ValueError):
    """A binary artifact is malformed, truncated or of the wrong kind."""

    def __init__(self, path: Optional[str], message: str):
        self.path = path
        prefix = f"{path}: " if path else ""
        super().__init__(f"{prefix}{message}")


class StaleIndexError(HybridQuantError, RuntimeError):
    """The code index was built with different codebooks than the model."""


class EmptyIndexError(HybridQuantError, ValueError):
    """Search was requested against an index with no items."""
