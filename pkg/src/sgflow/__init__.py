"""Spectral toolkit for the stochastic surface-growth equation
dh/dt + Delta^2 h + Delta |grad h|^2 = noise on the 2D torus."""

__version__ = "0.1.0"
