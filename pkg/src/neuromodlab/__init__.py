"""Evolved neuromodulated plastic controllers on a configurable T-maze style graph."""

__version__ = "0.1.0"
