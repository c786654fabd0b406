"""Orbit tilings and finite-averaging checks for measure-preserving Z-actions."""

__version__ = "0.1.0"
