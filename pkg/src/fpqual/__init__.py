"""Fingerprint image-quality metrics and quality-based evaluation tools."""

__version__ = "0.1.0"
