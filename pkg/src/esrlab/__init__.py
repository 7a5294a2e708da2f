"""Desk-scale laboratory for empowerment-based assistance."""

__version__ = "0.1.0"
