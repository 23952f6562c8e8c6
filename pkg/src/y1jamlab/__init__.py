"""Closed-loop lab for Y1 analytics exposure and analytics-guided jamming."""

__version__ = "0.1.0"
