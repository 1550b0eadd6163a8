"""Oriented-Gaussian surface toolkit."""

__version__ = "0.1.0"
