"""Hybrid lunar positioning, navigation and timing: error models, filters and bounds."""

__version__ = "0.1.0"
