"""Blind source separation of RF mixtures on a simulated microring weight bank."""

__version__ = "0.1.0"
