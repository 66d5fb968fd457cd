"""Consistent-quality rate adaptation for HTTP adaptive streaming."""

__version__ = "0.1.0"
