"""Radar reflection-list object classification toolkit."""

__version__ = "0.1.0"
