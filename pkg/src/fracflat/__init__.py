"""Fractional kernels, nonlocal mean curvature and flatness diagnostics for metrics on R^n."""

__version__ = "0.1.0"
