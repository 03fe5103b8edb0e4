"""Commit-level vulnerability assessment toolkit."""

__version__ = "0.1.0"
