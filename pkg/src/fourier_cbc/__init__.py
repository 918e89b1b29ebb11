"""Data-driven safety verification with Fourier barrier certificates."""

__version__ = "0.1.0"
