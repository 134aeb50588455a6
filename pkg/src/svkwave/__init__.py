"""Weakly nonlinear Rayleigh wavetrains for the Saint Venant-Kirchhoff half-plane."""

__version__ = "0.1.0"
