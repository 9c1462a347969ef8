"""Simulated inside-mouth bite transfer: robust mouth tracking, contact
classification and interaction-aware compliant control."""

__version__ = "0.1.0"
