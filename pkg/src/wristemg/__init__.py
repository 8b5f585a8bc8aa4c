"""Wrist sEMG thumb-gesture decoding and electrode-configuration analysis."""

__version__ = "0.1.0"
