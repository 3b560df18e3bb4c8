"""Temporal event proposals, context-aware captioning, and evaluation."""

__version__ = "0.1.0"
