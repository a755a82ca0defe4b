"""Invisible-marker deformable surface reconstruction, tracking and label warping."""

__version__ = "0.1.0"
