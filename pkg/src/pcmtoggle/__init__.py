"""Electrothermal simulator of a six-contact phase-change toggle device."""

__version__ = "0.1.0"
