"""Regularized symplectic forms: certification, Darboux charts, Poisson structure."""

__version__ = "0.1.0"
