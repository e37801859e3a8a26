"""Particle systems uniformly coupled to a macroscopic component, and their mean-field limit."""

__version__ = "0.1.0"
