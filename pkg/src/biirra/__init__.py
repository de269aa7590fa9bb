"""Multilingual text-to-image person retrieval at desk scale."""

__version__ = "0.1.0"
