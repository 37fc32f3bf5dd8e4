"""Gaussian random number generators and fixed-point BNN inference models."""

__version__ = "0.1.0"
