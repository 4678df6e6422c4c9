"""Chebyshev-moment ground-state energy estimation: Krylov diagonalisation and statistical phase estimation."""

__version__ = "0.1.0"
