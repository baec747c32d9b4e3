"""Coarse-to-fine object proposals from convolutional feature maps."""

__version__ = "0.1.0"
