"""Hierarchical topic-path inference with selective interpolation."""

__version__ = "0.1.0"
