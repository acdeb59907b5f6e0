"""Sketch-driven generation and real-time editing of UV-bound 3D Gaussian heads."""

__version__ = "0.1.0"
