"""Entropy-structure checks and an entropy-variable solver for two-species cross-diffusion systems."""

__version__ = '1.0.0'
