"""Desk-scale experiments on thin subgroups of SL2(Z): ball counts, congruence
reductions, Cayley-graph spectral gaps, transfer operators, and the affine sieve."""

from .hyperbolic import GeneratorSystem, Mat2Z, UpperHalfPoint, enumerate_ball

__all__ = ["GeneratorSystem", "Mat2Z", "UpperHalfPoint", "enumerate_ball"]
__version__ = "0.1.0"
