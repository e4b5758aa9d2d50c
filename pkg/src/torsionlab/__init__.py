"""Numerical study of the torsion and eigenvalue shape functionals
F = T / (M |Omega|) and G = M lambda_1 on plane domains."""

__version__ = "0.1.0"
