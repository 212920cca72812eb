"""Importance-weighted cross-validation with a weight-based control variate."""

__version__ = "0.1.0"
