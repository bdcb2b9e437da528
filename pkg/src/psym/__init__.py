"""psym: partial-symmetry analysis of differential systems."""

__version__ = "0.1.0"
