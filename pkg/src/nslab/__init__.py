"""Pseudo-spectral laboratory for periodic Navier-Stokes and its two-viscosity regularization."""

__version__ = "0.1.0"
