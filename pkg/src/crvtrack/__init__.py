"""Weakly supervised cross-view referring tracking: pseudo labels, kernels, metrics."""

__version__ = "0.1.0"
