"""Finite-volume simulation of the zero-temperature ac-conductivity in the Anderson model."""

__version__ = "0.1.0"
