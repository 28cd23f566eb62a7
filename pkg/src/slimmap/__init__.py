"""Vectorized line/plane landmark maps with multi-session merging and marginalization."""

__version__ = "0.1.0"
