"""Adoption, engagement and success prediction for apps on a social graph."""

__version__ = "0.1.0"
