"""Mist-assisted hierarchical federated intrusion-detection simulator."""

__version__ = "0.1.0"
