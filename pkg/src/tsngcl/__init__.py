"""Gate control list synthesis for drifting clocks."""

__version__ = "0.1.0"
