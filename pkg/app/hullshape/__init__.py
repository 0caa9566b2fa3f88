"""Convex hulls of Gaussian path samples and their covariance-determined limit shapes."""

__version__ = "0.3.0"
