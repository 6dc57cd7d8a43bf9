"""Offline figures from topic-path inference run outputs."""

__version__ = "0.1.0"
