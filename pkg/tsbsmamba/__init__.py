"""Two-stage band-split Mamba-2 music source separation."""

__version__ = "1.0.0"
