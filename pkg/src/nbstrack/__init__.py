"""Structured neural backstepping tracking control for Euler-Lagrange systems."""

__version__ = "0.1.0"
