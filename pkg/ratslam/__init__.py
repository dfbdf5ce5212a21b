"""Offline RatSLAM: pose cells, local view templates and an experience map."""

__version__ = "0.1.0"
