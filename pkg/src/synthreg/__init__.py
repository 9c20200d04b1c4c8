"""Synthetic control as online linear regression."""

__version__ = "0.1.0"
