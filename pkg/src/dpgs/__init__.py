"""Differentially private synthetic embeddings from a clustered Gaussian mixture."""

__version__ = "0.1.0"
