"""Mutual information estimation with RKHS (spectral kernel) critics."""

__version__ = "0.1.0"
