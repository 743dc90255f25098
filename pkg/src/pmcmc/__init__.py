"""Particle MCMC and embedded HMM samplers for linear-Gaussian state-space models."""

__version__ = "0.1.0"
