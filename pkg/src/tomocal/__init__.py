"""Joint image and geometry reconstruction for blocked fan-beam tomography."""

__version__ = "0.1.0"
