"""Phase-structure guided verification of distributed protocols."""

__version__ = "0.1.0"
