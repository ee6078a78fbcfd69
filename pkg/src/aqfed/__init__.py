"""Federated segmentation under heterogeneous contour annotation noise."""

__version__ = "0.1.0"
