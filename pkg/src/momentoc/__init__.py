"""Moment-SOS relaxations for optimal control with unbounded controls."""

__version__ = "0.1.0"
