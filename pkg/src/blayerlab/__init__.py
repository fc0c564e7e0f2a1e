"""Desk-scale numerical laboratory for steady boundary layers."""

__version__ = "0.1.0"
