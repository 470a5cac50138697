"""Continuous-time dynamic communicability for temporal networks."""
__version__ = "0.1.0"
