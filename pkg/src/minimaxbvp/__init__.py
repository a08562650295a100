"""Guaranteed (minimax) estimation for linear boundary value problems."""

__version__ = "0.1.0"
