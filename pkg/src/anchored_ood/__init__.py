"""Anchored neural-network training, anchor-marginalized OOD scoring and NTK analysis."""

__version__ = "0.1.0"
