"""Hierarchical topic modeling with transport-plan dependencies and context-aware decoding."""

__version__ = "0.1.0"
