"""Offline figure generation from sbmlab CSV artifacts."""

__version__ = "0.1.0"
