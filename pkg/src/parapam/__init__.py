"""Paracontrolled calculus and spectral solvers for the 2-D parabolic Anderson model."""

__version__ = "0.1.0"
