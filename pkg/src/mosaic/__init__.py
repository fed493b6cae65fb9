"""MOSAIC: cross-paradigm multi-agent evaluation platform."""

__version__ = "0.1.0"
