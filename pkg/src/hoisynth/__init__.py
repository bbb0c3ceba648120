"""Gaze-conditioned hand-object interaction synthesis on procedural scenes."""

__version__ = "0.1.0"
