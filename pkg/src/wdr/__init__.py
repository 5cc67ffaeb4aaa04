"""Competing-risks survival models built on racing Weibull sub-events."""

__version__ = "0.1.0"
