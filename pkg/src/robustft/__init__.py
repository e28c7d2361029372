"""Offline-to-online RL with adversarial action-space fine-tuning and q-curricula."""

from robustft.errors import (
    ConfigError,
    NumericError,
    ParseError,
    ShapeError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "StateError",
]
