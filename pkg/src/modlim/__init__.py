"""Numerical laboratory for the semiclassical mean-field limit to Euler-Poisson."""

__version__ = "0.1.0"
