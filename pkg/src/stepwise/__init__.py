"""Obesity-status improvement prediction from wearable step counts."""

__version__ = "0.1.0"
