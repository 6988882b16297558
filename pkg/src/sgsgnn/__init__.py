"""Supervised graph sparsification: learned edge sampling plus a weighted GCN."""

__version__ = "0.1.0"
