"""Synthetic language-image-3D dataset expansion toolkit."""

__version__ = "0.1.0"
