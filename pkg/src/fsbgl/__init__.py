"""Low-rank basis model with a sparse coefficient precision and compactly
supported small-scale covariance."""

__version__ = "0.1.0"
