"""Charge-based implicit fields for shell metamaterials and their periodic homogenization."""

__version__ = "0.1.0"
