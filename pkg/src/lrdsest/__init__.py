"""S-estimation for two-phase regression with long-memory Gaussian data."""

__version__ = "0.1.0"
