"""Bounds and exponents for mismatched decoding over discrete memoryless channels."""

__version__ = "0.1.0"
