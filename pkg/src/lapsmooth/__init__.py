"""Laplacian-smoothed differentially private SGD."""

__version__ = '0.1.0'
